#include "dfm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dfm {

namespace {

constexpr char kMagic[4] = {'D', 'F', 'M', 'C'};

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

void write_tensor(std::ostream& os, const std::string& name, const std::vector<double>& data) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, 1);
    write_u64(os, data.size());
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
}

struct TensorRecord {
    std::string name;
    std::vector<double> data;
};

bool read_tensor(std::istream& is, TensorRecord& rec) {
    uint32_t name_len = 0;
    if (!is.read(reinterpret_cast<char*>(&name_len), 4)) return false;
    rec.name.resize(name_len);
    is.read(rec.name.data(), name_len);
    const uint32_t rank = read_u32(is);
    uint64_t count = 1;
    for (uint32_t r = 0; r < rank; ++r) count *= read_u64(is);
    rec.data.resize(count);
    is.read(reinterpret_cast<char*>(rec.data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor record");
    return true;
}

std::vector<double> bits_to_doubles(const uint64_t* words, size_t n) {
    std::vector<double> out(n);
    std::memcpy(out.data(), words, n * sizeof(double));
    return out;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    std::ostringstream buf(std::ios::binary);

    buf.write(kMagic, 4);
    write_u32(buf, version);
    const std::string cfg_text = config.serialize();
    write_u64(buf, cfg_text.size());
    buf.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));

    write_tensor(buf, "params", params);
    write_tensor(buf, "adam_m", adam_m);
    write_tensor(buf, "adam_v", adam_v);
    write_tensor(buf, "wnet_params", wnet_params);
    write_tensor(buf, "wnet_m", wnet_m);
    write_tensor(buf, "wnet_v", wnet_v);
    write_tensor(buf, "step", bits_to_doubles(&step, 1));
    write_tensor(buf, "rng_state", bits_to_doubles(rng_state.data(), 4));

    const std::string bytes = buf.str();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    Checkpoint ck;
    ck.version = read_u32(in);
    if (ck.version != 1) throw std::runtime_error("checkpoint: unsupported version");
    const uint64_t cfg_len = read_u64(in);
    std::string cfg_text(cfg_len, '\0');
    in.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
    ck.config = Config::parse_text(cfg_text);

    TensorRecord rec;
    while (read_tensor(in, rec)) {
        if (rec.name == "params")
            ck.params = std::move(rec.data);
        else if (rec.name == "adam_m")
            ck.adam_m = std::move(rec.data);
        else if (rec.name == "adam_v")
            ck.adam_v = std::move(rec.data);
        else if (rec.name == "wnet_params")
            ck.wnet_params = std::move(rec.data);
        else if (rec.name == "wnet_m")
            ck.wnet_m = std::move(rec.data);
        else if (rec.name == "wnet_v")
            ck.wnet_v = std::move(rec.data);
        else if (rec.name == "step")
            std::memcpy(&ck.step, rec.data.data(), sizeof(uint64_t));
        else if (rec.name == "rng_state")
            std::memcpy(ck.rng_state.data(), rec.data.data(), 4 * sizeof(uint64_t));
    }
    return ck;
}

std::string Checkpoint::content_id() const {
    std::ostringstream buf(std::ios::binary);
    buf.write(kMagic, 4);
    write_u32(buf, version);
    const std::string cfg_text = config.serialize();
    write_u64(buf, cfg_text.size());
    buf.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
    write_tensor(buf, "params", params);
    write_tensor(buf, "step", bits_to_doubles(&step, 1));
    const std::string bytes = buf.str();
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

DenoiserModel Checkpoint::restore_model() const {
    const ModelArch arch = arch_from_config(config);
    Schedule sched = schedule_from_config(config);
    DenoiserModel model(arch, std::move(sched), 0);
    if (model.params().size() != params.size())
        throw std::runtime_error("checkpoint: parameter count does not match the arch descriptor");
    model.params() = params;
    return model;
}

WeightNet Checkpoint::restore_weight_net() const {
    const std::string mode_str = config.get_or("loss.learnable_weight", "none");
    LearnableWeightMode mode = LearnableWeightMode::None;
    if (mode_str == "of_s") mode = LearnableWeightMode::OfS;
    else if (mode_str == "of_st") mode = LearnableWeightMode::OfSt;
    WeightNet net(mode, 0);
    if (!wnet_params.empty()) {
        if (net.param_count() != wnet_params.size())
            throw std::runtime_error("checkpoint: weight-net parameter count mismatch");
        net.params() = wnet_params;
    }
    return net;
}

ModelArch arch_from_config(const Config& cfg) {
    ModelArch arch;
    arch.hidden_width = static_cast<int>(cfg.get_int_or("model.hidden_width", 64));
    arch.n_layers = static_cast<int>(cfg.get_int_or("model.n_layers", 2));
    arch.seq_len = static_cast<int>(cfg.get_int("model.seq_len"));
    arch.vocab_size = static_cast<int>(cfg.get_int("model.vocab_size"));
    arch.conditional = cfg.get_bool_or("model.conditional", false);
    arch.max_context = static_cast<int>(cfg.get_int_or("model.max_context", 256));
    return arch;
}

void arch_to_config(const ModelArch& arch, Config& cfg) {
    cfg.set_int("model.hidden_width", arch.hidden_width);
    cfg.set_int("model.n_layers", arch.n_layers);
    cfg.set_int("model.seq_len", arch.seq_len);
    cfg.set_int("model.vocab_size", arch.vocab_size);
    cfg.set_bool("model.conditional", arch.conditional);
    cfg.set_int("model.max_context", arch.max_context);
}

Schedule schedule_from_config(const Config& cfg) {
    const std::string kind = cfg.get_or("schedule.kind", "linear");
    Schedule sched;
    if (kind == "linear") {
        sched = Schedule::make_linear();
    } else if (cfg.has("schedule.grid")) {
        std::ostringstream desc;
        desc << (kind == "blended-argmax" ? "blended-argmax" : "tabulated")
             << ";lambda=" << cfg.get_or("schedule.lambda_blend", "0")
             << ";grid=" << cfg.get("schedule.grid");
        sched = Schedule::parse(desc.str());
    } else if (kind == "blended-argmax") {
        Rng rng(static_cast<uint64_t>(cfg.get_int_or("schedule.calibration_seed", 1)));
        sched = Schedule::make_blended_argmax(
            cfg.get_double_or("schedule.lambda_blend", 0.9),
            static_cast<int>(cfg.get_int_or("schedule.vocab_size",
                                            cfg.get_int_or("model.vocab_size", 2))),
            cfg.get_double_or("schedule.noise_std", 1.0),
            static_cast<int>(cfg.get_int_or("schedule.mc_samples", 50000)),
            static_cast<int>(cfg.get_int_or("schedule.grid_size", 256)), rng);
    } else {
        throw std::runtime_error("schedule: tabulated kind requires schedule.grid");
    }
    const double stagger = cfg.get_double_or("schedule.stagger", 0.0);
    if (cfg.has("schedule.offsets")) {
        std::ostringstream desc;
        desc << sched.describe() << ";offsets=" << cfg.get("schedule.offsets");
        sched = Schedule::parse(desc.str());
    } else if (stagger > 0.0) {
        sched = sched.with_position_stagger(
            static_cast<int>(cfg.get_int("model.seq_len")), stagger);
    }
    return sched;
}

void schedule_to_config(const Schedule& sched, Config& cfg) {
    switch (sched.kind()) {
        case ScheduleKind::Linear: cfg.set("schedule.kind", "linear"); break;
        case ScheduleKind::BlendedArgmax: cfg.set("schedule.kind", "blended-argmax"); break;
        case ScheduleKind::Tabulated: cfg.set("schedule.kind", "tabulated"); break;
    }
    cfg.set_double("schedule.lambda_blend", sched.lambda_blend());
    if (!sched.grid_t().empty()) {
        std::ostringstream os;
        for (size_t i = 0; i < sched.grid_t().size(); ++i) {
            if (i) os << ',';
            os << format_double_exact(sched.grid_t()[i]) << ':'
               << format_double_exact(sched.grid_beta()[i]);
        }
        cfg.set("schedule.grid", os.str());
    }
    if (sched.per_position()) {
        std::ostringstream os;
        for (size_t i = 0; i < sched.position_offsets().size(); ++i) {
            if (i) os << ',';
            os << format_double_exact(sched.position_offsets()[i]);
        }
        cfg.set("schedule.offsets", os.str());
    }
}

}  // namespace dfm
