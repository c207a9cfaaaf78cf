#include <iostream>
#include <string>

#include "../tests/support/golden_fixtures.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_goldens <dir>\n";
    return 2;
  }
  const std::string dir = argv[1];
  lcl::save_corpus(lcl::golden::corpus_fixture(), dir + "/corpus_small.bin");
  lcl::save_packed(lcl::golden::packed_fixture(), dir + "/packed_small.bin");
  lcl::write_bytes(dir + "/checkpoint_small.ckpt", lcl::golden::checkpoint_bytes());
  std::cout << "wrote goldens to " << dir << "\n";
}
