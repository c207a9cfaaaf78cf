#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "json.hpp"

#include "lcl/objective/losses.hpp"

namespace lcl {

struct LossReport {
  std::uint64_t step = 0;
  double total = 0;
  double contrastive = 0;
  double generation = 0;
  double tau = 0;
  CollapseMetrics collapse;
  double lr = 0;
  double lambda = 0;
  double context_to_image = 0;
  double image_to_context = 0;
  std::size_t text_targets = 0;
  std::size_t images = 0;

  bool finite() const {
    return std::isfinite(total) && std::isfinite(contrastive) && std::isfinite(generation) && std::isfinite(tau);
  }

  /// Fixed field order; non-finite numbers become null.
  nlohmann::ordered_json to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr); };
    nlohmann::ordered_json j;
    j["step"] = step;
    j["L_total"] = num(total);
    j["L_con"] = num(contrastive);
    j["L_gen"] = num(generation);
    j["tau"] = num(tau);
    j["variance"] = num(collapse.variance);
    j["alignment"] = num(collapse.alignment);
    j["uniformity"] = num(collapse.uniformity);
    j["lr"] = num(lr);
    j["lambda"] = num(lambda);
    j["L_con_t2i"] = num(context_to_image);
    j["L_con_i2t"] = num(image_to_context);
    j["text_targets"] = text_targets;
    j["images"] = images;
    return j;
  }

  std::string to_line() const { return to_json().dump(); }

  static LossReport from_json(const nlohmann::json& j) {
    auto num = [&](const char* k) { return j.at(k).is_null() ? std::nan("") : j.at(k).get<double>(); };
    LossReport r;
    r.step = j.at("step").get<std::uint64_t>();
    r.total = num("L_total");
    r.contrastive = num("L_con");
    r.generation = num("L_gen");
    r.tau = num("tau");
    r.collapse = {num("variance"), num("alignment"), num("uniformity")};
    r.lr = num("lr");
    if (j.contains("lambda")) r.lambda = num("lambda");
    if (j.contains("L_con_t2i")) r.context_to_image = num("L_con_t2i");
    if (j.contains("L_con_i2t")) r.image_to_context = num("L_con_i2t");
    if (j.contains("text_targets")) r.text_targets = j.at("text_targets").get<std::size_t>();
    if (j.contains("images")) r.images = j.at("images").get<std::size_t>();
    return r;
  }
};

}  // namespace lcl
