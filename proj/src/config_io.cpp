#include "vqunet/config_io.hpp"

#include <algorithm>
#include <string>

namespace vqunet {

using nlohmann::json;

void require_known_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw ConfigError(std::string(where) + ": unknown key '" + item.key() + "'");
    }
  }
}

json to_json(const VQUNetConfig& c) {
  return json{{"input_shape", c.input_shape},
              {"depth", c.depth},
              {"stem_channels", c.stem_channels},
              {"channels", c.channels},
              {"codebook_k", c.codebook_k},
              {"vq_enabled", c.vq_enabled},
              {"alpha", c.alpha},
              {"beta", c.beta},
              {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"seed", c.seed}};
}

VQUNetConfig vqunet_config_from_json(const json& j) {
  constexpr std::string_view where = "purifier";
  require_known_keys(j,
                     {"input_shape", "depth", "stem_channels", "channels", "codebook_k", "vq_enabled", "alpha",
                      "beta", "learning_rate", "batch_size", "epochs", "seed"},
                     where);
  VQUNetConfig c;
  read_field(j, "input_shape", c.input_shape, where);
  read_field(j, "depth", c.depth, where);
  read_field(j, "stem_channels", c.stem_channels, where);
  read_field(j, "channels", c.channels, where);
  read_field(j, "codebook_k", c.codebook_k, where);
  read_field(j, "vq_enabled", c.vq_enabled, where);
  read_field(j, "alpha", c.alpha, where);
  read_field(j, "beta", c.beta, where);
  read_field(j, "learning_rate", c.learning_rate, where);
  read_field(j, "batch_size", c.batch_size, where);
  read_field(j, "epochs", c.epochs, where);
  read_field(j, "seed", c.seed, where);
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

json to_json(const ClassifierConfig& c) {
  return json{{"input_shape", c.input_shape}, {"num_classes", c.num_classes},
              {"channels", c.channels},       {"learning_rate", c.learning_rate},
              {"epochs", c.epochs},           {"batch_size", c.batch_size},
              {"seed", c.seed}};
}

ClassifierConfig classifier_config_from_json(const json& j) {
  constexpr std::string_view where = "classifier";
  require_known_keys(j, {"input_shape", "num_classes", "channels", "learning_rate", "epochs", "batch_size", "seed"},
                     where);
  ClassifierConfig c;
  read_field(j, "input_shape", c.input_shape, where);
  read_field(j, "num_classes", c.num_classes, where);
  read_field(j, "channels", c.channels, where);
  read_field(j, "learning_rate", c.learning_rate, where);
  read_field(j, "epochs", c.epochs, where);
  read_field(j, "batch_size", c.batch_size, where);
  read_field(j, "seed", c.seed, where);
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

}  // namespace vqunet
