#ifndef NFA_HARNESS_CHECKPOINT_HPP
#define NFA_HARNESS_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nfa/classifier.hpp"
#include "nfa/flow/model.hpp"
#include "nfa/io.hpp"

namespace nfa::harness {

// "NFCK" layout, little-endian:
//   magic "NFCK" | u32 version | u32 descriptor length | descriptor (JSON, UTF-8)
//   | u64 float count | u32 CRC-32 of the payload bytes | payload (f32)
// The descriptor lists every tensor in payload order, so a model can be
// rebuilt from the file alone.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json descriptor;
  std::vector<float> payload;
};

io::Bytes encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source = "checkpoint");
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// `meta` lands under descriptor["training"].
Checkpoint flow_checkpoint(const flow::FlowModel<float>& model, const nlohmann::json& meta = nlohmann::json::object());
flow::FlowModel<float> flow_from_checkpoint(const Checkpoint& ck);

Checkpoint classifier_checkpoint(const classifier::ClassifierModel& model,
                                 const nlohmann::json& meta = nlohmann::json::object());
classifier::ClassifierModel classifier_from_checkpoint(const Checkpoint& ck);

}  // namespace nfa::harness

#endif  // NFA_HARNESS_CHECKPOINT_HPP
