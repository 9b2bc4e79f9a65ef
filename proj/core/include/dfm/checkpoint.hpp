#pragma once

// Persisted training state. Binary layout:
//   magic "DFMC" | u32 version | u64 config length | config text |
//   tensor records: u32 name length | name | u32 rank | u64 dims... |
//   raw little-endian f64 data.
// The config blob carries the model arch, schedule, and run settings; the
// RNG state and step counter ride along as bit-cast tensors. Save -> load ->
// save is byte-identical.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dfm/config.hpp"
#include "dfm/losses.hpp"
#include "dfm/model.hpp"

namespace dfm {

struct Checkpoint {
    uint32_t version = 1;
    Config config;
    std::vector<double> params;
    std::vector<double> adam_m, adam_v;
    std::vector<double> wnet_params, wnet_m, wnet_v;  // empty without learnable weighting
    uint64_t step = 0;
    std::array<uint64_t, 4> rng_state{};

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    DenoiserModel restore_model() const;
    WeightNet restore_weight_net() const;

    // FNV-1a over the serialized bytes; used as the checkpoint id in reports.
    std::string content_id() const;
};

// Config <-> domain object glue shared by the trainer and CLI.
ModelArch arch_from_config(const Config& cfg);
void arch_to_config(const ModelArch& arch, Config& cfg);
Schedule schedule_from_config(const Config& cfg);
void schedule_to_config(const Schedule& sched, Config& cfg);

}  // namespace dfm
