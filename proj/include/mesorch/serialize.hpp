#ifndef MESORCH_SERIALIZE_HPP_
#define MESORCH_SERIALIZE_HPP_

#include "json.hpp"
#include "mesorch/model.hpp"
#include "mesorch/pruning.hpp"
#include "mesorch/train.hpp"

namespace mesorch {

using ordered_json = nlohmann::ordered_json;

ordered_json config_to_json(const MesorchConfig& cfg);
// Rejects unknown keys; absent keys keep preset/base defaults.
MesorchConfig config_from_json(const nlohmann::json& j, const MesorchConfig& base);

ordered_json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base);

ordered_json prune_config_to_json(const PruneConfig& cfg);
PruneConfig prune_config_from_json(const nlohmann::json& j, const PruneConfig& base);

// Raw float32 little-endian blob I/O used by checkpoints and train state.
void write_f32_blob(const std::string& path, const std::vector<double>& values);
void read_f32_blob(const std::string& path, std::vector<double>* values,
                   std::int64_t expected_count);

}  // namespace mesorch

#endif  // MESORCH_SERIALIZE_HPP_
