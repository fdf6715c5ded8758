#include "mbsync/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mbsync/container.hpp"
#include "mbsync/denoiser.hpp"
#include "mbsync/diffusion.hpp"
#include "mbsync/freq.hpp"
#include "mbsync/geometry_metrics.hpp"
#include "mbsync/rng.hpp"
#include "mbsync/scenes.hpp"
#include "mbsync/sync.hpp"

namespace mbsync {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string fmt(double v) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in output");
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) out.push_back(trim(item));
    return out;
}

enum class KeyType { Int, U64, Double, Bool, String, IntList, DoubleList, StringList };

struct KeySpec {
    const char* name;
    KeyType type;
    const char* value;
    bool hashed;
};

// Defaults. configs/default.cfg mirrors this table.
const KeySpec kKeys[] = {
    {"seed", KeyType::U64, "1", true},
    {"out", KeyType::String, "out", false},
    {"threads", KeyType::Int, "1", false},
    // scenes
    {"m", KeyType::Int, "2", true},
    {"n", KeyType::Int, "1", true},
    {"joints", KeyType::Int, "21", true},
    {"frames", KeyType::Int, "64", true},
    {"min_frames", KeyType::Int, "64", true},
    {"families", KeyType::StringList, "carry,rub", true},
    {"scenes", KeyType::Int, "256", true},
    // bands and schedule
    {"cutoff", KeyType::Int, "16", true},
    {"band_mode", KeyType::String, "symmetric", true},
    {"steps", KeyType::Int, "1000", true},
    {"beta_min", KeyType::Double, "0.0001", true},
    {"beta_max", KeyType::Double, "0.01", true},
    // ablations
    {"decompose", KeyType::Bool, "true", true},
    {"align_loss", KeyType::Bool, "true", true},
    {"sync", KeyType::Bool, "true", true},
    // sync
    {"sync_interval", KeyType::Int, "50", true},
    {"lambda_exp", KeyType::Double, "0.3", true},
    {"sync_normalize", KeyType::Bool, "true", true},
    {"sync_sign_align", KeyType::Bool, "true", true},
    // loss
    {"w_dc", KeyType::Double, "1", true},
    {"w_ac", KeyType::Double, "2.5", true},
    {"w_norm", KeyType::Double, "0.1", true},
    {"w_align", KeyType::Double, "0.3", true},
    // network and training
    {"hidden", KeyType::Int, "128", true},
    {"time_dim", KeyType::Int, "64", true},
    {"pos_freqs", KeyType::Int, "8", true},
    {"epochs", KeyType::Int, "60", true},
    {"batch", KeyType::Int, "16", true},
    {"lr", KeyType::Double, "0.05", true},
    {"momentum", KeyType::Double, "0.9", true},
    {"clip", KeyType::Double, "1", true},
    // sampling and evaluation
    {"samples", KeyType::Int, "64", true},
    {"samples_per_condition", KeyType::Int, "1", true},
    {"sample_batch", KeyType::Int, "1", true},
    {"voxel", KeyType::Double, "0.005", true},
    {"bench_intervals", KeyType::IntList, "10,25,50,100", true},
    {"bench_lambdas", KeyType::DoubleList, "0,0.1,0.3,1", true},
    {"bench_sequences", KeyType::Int, "8", true},
    {"bench_variance", KeyType::Double, "0.0001", true},
    // inputs
    {"dataset", KeyType::String, "", true},
    {"checkpoint", KeyType::String, "", true},
    {"input", KeyType::String, "", true},
    {"gt", KeyType::String, "", true},
};

const KeySpec* find_key(const std::string& key) {
    for (const auto& k : kKeys) {
        if (key == k.name) return &k;
    }
    return nullptr;
}

std::string canonical_scalar(KeyType type, const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    auto bad = [&]() { return ConfigError("config: bad value '" + raw + "' for " + key); };
    switch (type) {
        case KeyType::Int:
        case KeyType::IntList: {
            long long x = 0;
            const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
            if (r.ec != std::errc() || r.ptr != v.data() + v.size() || x < std::numeric_limits<int>::min() ||
                x > std::numeric_limits<int>::max()) {
                throw bad();
            }
            return std::to_string(x);
        }
        case KeyType::U64: {
            std::uint64_t x = 0;
            const bool hex = v.size() > 2 && v[0] == '0' && (v[1] == 'x' || v[1] == 'X');
            const char* b = v.data() + (hex ? 2 : 0);
            const auto r = std::from_chars(b, v.data() + v.size(), x, hex ? 16 : 10);
            if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size()) throw bad();
            return std::to_string(x);
        }
        case KeyType::Double:
        case KeyType::DoubleList: {
            double x = 0;
            const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
            if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(x)) throw bad();
            char buf[64];
            const auto w = std::to_chars(buf, buf + sizeof buf, x);
            return std::string(buf, w.ptr);
        }
        case KeyType::Bool: {
            std::string l = v;
            std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
            if (l == "true" || l == "1" || l == "yes" || l == "on") return "true";
            if (l == "false" || l == "0" || l == "no" || l == "off") return "false";
            throw bad();
        }
        case KeyType::String:
        case KeyType::StringList:
            if (v.find_first_of("\n,") != std::string::npos && type == KeyType::String) throw bad();
            return v;
    }
    throw bad();
}

}  // namespace

std::uint64_t file_hash(const std::string& path) { return fnv1a64(read_file(path)); }

RunConfig RunConfig::defaults() {
    RunConfig c;
    for (const auto& k : kKeys) c.set(k.name, k.value);
    return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto* spec = find_key(key);
    if (!spec) throw ConfigError("config: unknown key '" + key + "'");
    const bool list = spec->type == KeyType::IntList || spec->type == KeyType::DoubleList ||
                      spec->type == KeyType::StringList;
    if (!list) {
        values_[key] = canonical_scalar(spec->type, key, value);
        return;
    }
    std::string joined;
    for (const auto& item : split(value, ',')) {
        if (!joined.empty()) joined += ',';
        joined += canonical_scalar(spec->type, key, item);
    }
    values_[key] = joined;
}

void RunConfig::set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("config: expected key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        if (trim(line).empty()) continue;
        try {
            set_assignment(line);
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

const std::string& RunConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
    return it->second;
}

int RunConfig::get_int(const std::string& key) const { return std::stoi(get(key)); }
std::uint64_t RunConfig::get_u64(const std::string& key) const { return std::stoull(get(key)); }
double RunConfig::get_double(const std::string& key) const { return std::stod(get(key)); }
bool RunConfig::get_bool(const std::string& key) const { return get(key) == "true"; }
std::vector<std::string> RunConfig::get_list(const std::string& key) const { return split(get(key), ','); }

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
    std::vector<int> out;
    for (const auto& s : get_list(key)) out.push_back(std::stoi(s));
    return out;
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : get_list(key)) out.push_back(std::stod(s));
    return out;
}

std::string RunConfig::canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) {
        if (!find_key(k)->hashed) continue;
        out += k + "=" + v + "\n";
    }
    return out;
}

void RunConfig::validate() const {
    auto need = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError("config: " + msg);
    };
    const int m = get_int("m"), n = get_int("n"), joints = get_int("joints");
    const int frames = get_int("frames"), min_frames = get_int("min_frames"), cutoff = get_int("cutoff");
    need(m >= 1 && n >= 0 && joints >= 2, "need m >= 1, n >= 0, joints >= 2");
    require_cutoff(frames, cutoff);
    need(min_frames <= frames && cutoff_valid(min_frames, cutoff), "min_frames must be in [4*cutoff, frames]");
    need(get_int("scenes") >= 1, "scenes must be >= 1");
    need(get_int("threads") >= 1, "threads must be >= 1");
    const auto fams = get_list("families");
    need(!fams.empty(), "families must not be empty");
    for (const auto& f : fams) {
        const auto fam = scene_family_from_string(f);
        need(fam != SceneFamily::Rub || m >= 2, "rub scenes need m >= 2");
        need(fam != SceneFamily::Handoff || n >= 2, "handoff scenes need n >= 2");
    }
    band_mode_from_string(get("band_mode"));
    const auto sched = make_schedule(get_int("steps"), get_double("beta_min"), get_double("beta_max"));
    if (get_bool("sync")) {
        SyncConfig sc;
        sc.interval = get_int("sync_interval");
        sc.lambda_exp = get_double("lambda_exp");
        sc.validate(sched);
    }
    LossWeights{get_double("w_dc"), get_double("w_ac"), get_double("w_norm"), get_double("w_align")}.validate();
    need(get_int("hidden") >= 1 && get_int("time_dim") >= 2 && get_int("time_dim") % 2 == 0 && get_int("pos_freqs") >= 0,
         "need hidden >= 1, even time_dim >= 2, pos_freqs >= 0");
    need(get_int("epochs") >= 0 && get_int("batch") >= 1, "need epochs >= 0 and batch >= 1");
    need(get_double("lr") > 0 && get_double("momentum") >= 0 && get_double("momentum") < 1 && get_double("clip") >= 0,
         "need lr > 0, momentum in [0, 1), clip >= 0");
    need(get_int("samples") >= 1 && get_int("samples_per_condition") >= 1 && get_int("sample_batch") >= 0,
         "need samples >= 1, samples_per_condition >= 1, sample_batch >= 0");
    need(get_double("voxel") > 0, "voxel must be > 0");
    need(!get_int_list("bench_intervals").empty() && !get_double_list("bench_lambdas").empty(),
         "bench lists must not be empty");
    for (int s : get_int_list("bench_intervals")) {
        SyncConfig sc;
        sc.interval = s;
        sc.validate(sched);
    }
    for (double l : get_double_list("bench_lambdas")) need(l >= 0, "bench_lambdas must be >= 0");
    need(get_int("bench_sequences") >= 1 && get_double("bench_variance") > 0,
         "need bench_sequences >= 1 and bench_variance > 0");
}

namespace {

struct Run {
    const RunConfig& cfg;
    fs::path out;
    std::ostream& log;
    json inputs = json::object();
    std::vector<std::string> outputs;
    json stats = json::object();

    fs::path output(const std::string& name) {
        outputs.push_back(name);
        return out / name;
    }
    std::string input(const std::string& key) {
        const auto& path = cfg.get(key);
        if (path.empty()) throw ConfigError("config: " + key + " must name an input file");
        if (!fs::exists(path)) throw std::runtime_error(key + ": no such file " + path);
        inputs[key] = {{"path", path}, {"fnv1a64", hex64(file_hash(path))}};
        return path;
    }
};

void write_manifest(Run& run, const std::string& command) {
    json cfg = json::object();
    for (const auto& [k, v] : run.cfg.values()) cfg[k] = v;
    json outs = json::object();
    for (const auto& name : run.outputs) outs[name] = hex64(file_hash((run.out / name).string()));
    const json manifest{{"command", command},
                        {"version", kVersion},
                        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                      std::to_string(EIGEN_MINOR_VERSION)},
                        {"seed", run.cfg.get_u64("seed")},
                        {"config_hash", hex64(run.cfg.hash())},
                        {"config", cfg},
                        {"inputs", run.inputs},
                        {"outputs", outs},
                        {"stats", run.stats}};
    write_file(run.out / "manifest.json", manifest.dump(2) + "\n");
}

BandMode band_mode(const RunConfig& cfg) { return band_mode_from_string(cfg.get("band_mode")); }

std::vector<SceneFamily> families(const RunConfig& cfg) {
    std::vector<SceneFamily> out;
    for (const auto& f : cfg.get_list("families")) out.push_back(scene_family_from_string(f));
    return out;
}

// Conditions for sampling live in their own seed range, apart from training scenes.
constexpr std::uint64_t kConditionBase = 1ULL << 32;

std::vector<SceneSpec> condition_specs(const RunConfig& cfg, int m, int n, int joints, int frames, int count) {
    const auto fams = families(cfg);
    const auto seed = cfg.get_u64("seed");
    std::vector<SceneSpec> out;
    for (int c = 0; c < count; ++c) {
        const auto fam = fams[static_cast<std::size_t>(c) % fams.size()];
        out.push_back(random_spec(fam, m, n, joints, frames,
                                  derive_seed(seed, {kStreamScene, kConditionBase + static_cast<std::uint64_t>(c)})));
    }
    return out;
}

// Specs and unpadded states from a dataset or trajectory container.
void load_states(const std::string& path, std::vector<SceneSpec>& specs, std::vector<HighOrderState>& states) {
    const std::string head = read_file(path).substr(0, 8);
    if (head == std::string(kMagicDataset, 8)) {
        const auto ds = load_dataset(path);
        specs = ds.specs;
        states.clear();
        for (std::size_t i = 0; i < ds.size(); ++i) states.push_back(unpad(ds.states[i], ds.masks[i]));
    } else if (head == std::string(kMagicTrajectories, 8)) {
        load_trajectories(path, specs, states);
    } else {
        throw FormatError(path + ": not a dataset or trajectory file");
    }
}

void cmd_gen_data(Run& run) {
    const auto& cfg = run.cfg;
    const int count = cfg.get_int("scenes"), frames = cfg.get_int("frames"), min_frames = cfg.get_int("min_frames");
    const auto fams = families(cfg);
    const auto seed = cfg.get_u64("seed");
    std::vector<SceneSpec> specs;
    for (int i = 0; i < count; ++i) {
        const auto idx = static_cast<std::uint64_t>(i);
        int len = frames;
        if (min_frames < frames) len = min_frames + static_cast<int>(Rng(derive_seed(seed, {kStreamScene, idx, 1})).next_u64() %
                                                                     static_cast<std::uint64_t>(frames - min_frames + 1));
        auto spec = random_spec(fams[static_cast<std::size_t>(i) % fams.size()], cfg.get_int("m"), cfg.get_int("n"),
                                cfg.get_int("joints"), len, derive_seed(seed, {kStreamScene, idx}));
        spec.validate(cfg.get_int("cutoff"));
        specs.push_back(std::move(spec));
    }
    const auto scenes = gen_scenes(specs, cfg.get_int("threads"));
    std::vector<HighOrderState> states;
    for (const auto& s : scenes) states.push_back(s.state);
    const auto ds = pad_and_mask(specs, states, frames);
    save_dataset(ds, run.output("dataset.bin").string());
    run.stats["scenes"] = count;
    run.log << "wrote " << count << " scenes to " << (run.out / "dataset.bin").string() << "\n";
}

DenoiserConfig denoiser_config(const RunConfig& cfg) {
    DenoiserConfig d;
    d.m = cfg.get_int("m");
    d.n = cfg.get_int("n");
    d.joints = cfg.get_int("joints");
    d.frames = cfg.get_int("frames");
    d.cutoff = cfg.get_int("cutoff");
    d.mode = band_mode(cfg);
    d.decompose = cfg.get_bool("decompose");
    d.hidden = cfg.get_int("hidden");
    d.time_dim = cfg.get_int("time_dim");
    d.pos_freqs = cfg.get_int("pos_freqs");
    d.steps = cfg.get_int("steps");
    d.beta_min = cfg.get_double("beta_min");
    d.beta_max = cfg.get_double("beta_max");
    return d;
}

void cmd_train(Run& run) {
    const auto& cfg = run.cfg;
    const auto ds = load_dataset(run.input("dataset"));
    if (ds.size() == 0) throw ConfigError("train: empty dataset");
    const auto dcfg = denoiser_config(cfg);
    const auto& lay = ds.states.front().layout;
    if (lay.rigids() != dcfg.m || lay.skeletons() != dcfg.n || lay.joints() != dcfg.joints ||
        ds.max_frames != dcfg.frames) {
        throw ConfigError("train: dataset layout or frame count differs from config m/n/joints/frames");
    }
    const auto seed = cfg.get_u64("seed");
    TrainableDenoiser net(dcfg, seed);
    const GeometryEncoder enc(seed);
    const auto set = make_training_set(ds, enc);
    TrainConfig tc;
    tc.epochs = cfg.get_int("epochs");
    tc.batch = cfg.get_int("batch");
    tc.lr = cfg.get_double("lr");
    tc.momentum = cfg.get_double("momentum");
    tc.clip = cfg.get_double("clip");
    tc.weights = {cfg.get_double("w_dc"), cfg.get_double("w_ac"), cfg.get_double("w_norm"),
                  cfg.get_bool("align_loss") ? cfg.get_double("w_align") : 0.0};
    tc.validate();

    std::string csv = "epoch,step,loss\n";
    Optimizer opt;
    double last = 0.0;
    for (int e = 0; e < tc.epochs; ++e) {
        const auto log = train_epoch(net, opt, set, tc, seed, e);
        for (std::size_t s = 0; s < log.step_loss.size(); ++s) {
            csv += std::to_string(e) + "," + std::to_string(s) + "," + fmt(log.step_loss[s]) + "\n";
        }
        last = log.mean();
        run.log << "epoch " << e << " loss " << last << "\n";
    }
    const json extra{{"encoder_seed", seed}, {"config_hash", hex64(cfg.hash())}, {"epochs", tc.epochs}, {"align_loss", cfg.get_bool("align_loss")}};
    net.save(run.output("checkpoint.bin").string(), extra.dump());
    write_file(run.output("loss.csv"), csv);
    run.stats["final_epoch_loss"] = tc.epochs ? fmt(last) : "";
    run.stats["parameters"] = net.parameter_count();
}

json checkpoint_extra(const std::string& path) {
    const auto c = read_container(path, kMagicCheckpoint);
    return json::parse(c.header).at("extra");
}

SyncConfig sync_config(const RunConfig& cfg) {
    SyncConfig s;
    s.enabled = cfg.get_bool("sync");
    s.interval = cfg.get_int("sync_interval");
    s.lambda_exp = cfg.get_double("lambda_exp");
    s.normalize_quaternions = cfg.get_bool("sync_normalize");
    s.align_quaternion_sign = cfg.get_bool("sync_sign_align");
    return s;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

void cmd_sample(Run& run) {
    const auto& cfg = run.cfg;
    const auto ckpt = run.input("checkpoint");
    const auto net = TrainableDenoiser::load(ckpt);
    const auto& d = net.config();
    if (d.steps != cfg.get_int("steps")) {
        throw ConfigError("sample: steps=" + cfg.get("steps") + " but the checkpoint was trained with " +
                          std::to_string(d.steps));
    }
    const GeometryEncoder enc(checkpoint_extra(ckpt).at("encoder_seed").get<std::uint64_t>());
    const int total = cfg.get_int("samples"), per = cfg.get_int("samples_per_condition");
    const int conditions = (total + per - 1) / per;
    const auto specs = condition_specs(cfg, d.m, d.n, d.joints, d.frames, conditions);
    std::vector<ConditionInputs> conds;
    for (const auto& s : specs) conds.push_back(make_condition(s, scene_shapes(s), enc, d.frames));

    SampleRequest req;
    req.rows = d.frames;
    req.cols = d.m ? net.layout().width() : 0;
    req.layout = &net.layout();
    req.batch = cfg.get_int("sample_batch");
    std::vector<SceneSpec> sample_specs;
    const auto seed = cfg.get_u64("seed");
    for (int k = 0; k < total; ++k) {
        req.cond.push_back(&conds[static_cast<std::size_t>(k / per)]);
        req.seeds.push_back(derive_seed(seed, {kStreamSample, static_cast<std::uint64_t>(k)}));
        sample_specs.push_back(specs[static_cast<std::size_t>(k / per)]);
    }
    SampleStats st;
    const auto xs = sample(net, req, net.schedule(), sync_config(cfg), &st);
    std::vector<HighOrderState> states;
    for (const auto& x : xs) states.push_back({net.layout(), x});
    save_trajectories(sample_specs, states, run.output("trajectories.bin").string());
    export_jsonl(states, run.output("trajectories.jsonl").string());
    run.stats["sync_steps"] = st.sync_steps;
    run.stats["lambda_bar"] = fmt(st.lambda_bar);
    run.stats["mean_sigma_ratio"] = fmt(st.sigma_ratio.empty() ? 1.0 : mean_of(st.sigma_ratio));
    run.log << "sampled " << total << " sequences (" << st.sync_steps << " sync steps)\n";
}

Matrix hand_points(const HighOrderState& x, const SceneSpec& spec, int i) {
    const FKChain chain = make_chain_for_joints(spec.joints).with_shape(spec.shape.row(i).transpose());
    return skeleton_surface_points(Matrix(x.block(x.layout.skeleton(i))), chain);
}

Matrix track(const HighOrderState& x) {
    if (x.layout.skeletons() > 0) {
        const int g = grasp_joint(x.layout.joints());
        return x.block(x.layout.skeleton(0)).middleCols(3 * g, 3);
    }
    return x.block(x.layout.rigid(0)).leftCols(3);
}

void cmd_eval(Run& run) {
    const auto& cfg = run.cfg;
    std::vector<SceneSpec> specs, gt_specs;
    std::vector<HighOrderState> states, gt;
    load_states(run.input("input"), specs, states);
    if (states.empty()) throw ConfigError("eval: no sequences in input");
    if (!cfg.get("gt").empty()) {
        load_states(run.input("gt"), gt_specs, gt);
        if (gt.size() != states.size()) throw ShapeError("eval: input and gt sequence counts differ");
    } else {
        for (const auto& s : specs) gt.push_back(gen_scene(s).state);
    }
    const auto& lay = states.front().layout;
    for (const auto& x : states) {
        if (!(x.layout == lay)) throw ConfigError("eval: mixed layouts in input");
    }
    const int m = lay.rigids(), n = lay.skeletons();
    const bool human = lay.joints() == 22;
    const double voxel = cfg.get_double("voxel");
    const int cutoff = cfg.get_int("cutoff");

    std::vector<std::string> cols{"alignment_residual"};
    if (n > 0) {
        cols.push_back("csr");
        cols.push_back("csiou");
        if (human) cols.push_back("crr");
    }
    if (m > 1) {
        cols.push_back("iv_cm3");
        cols.push_back("id_mm");
        cols.push_back("rel_ac_energy");
    }
    std::string csv = "seq,family,frames";
    for (const auto& c : cols) csv += "," + c;
    csv += "\n";
    std::map<std::string, std::vector<double>> columns;
    std::map<std::uint64_t, std::vector<Matrix>> groups;
    std::vector<Matrix> all_tracks;

    for (std::size_t k = 0; k < states.size(); ++k) {
        const auto& x = states[k];
        const auto& spec = specs[k];
        if (gt[k].frames() != x.frames() || !(gt[k].layout == lay)) throw ShapeError("eval: gt shape differs from input");
        std::map<std::string, double> row;
        row["alignment_residual"] = alignment_residual(x.data, lay);
        const auto shapes = scene_shapes(spec);
        const auto objs = posed_shapes(x, shapes);
        const auto gt_objs = posed_shapes(gt[k], shapes);
        if (n > 0) {
            std::vector<Matrix> hands, gt_hands, roots;
            for (int i = 0; i < n; ++i) {
                hands.push_back(hand_points(x, spec, i));
                gt_hands.push_back(hand_points(gt[k], spec, i));
                if (human) {
                    Matrix r(x.frames(), 6);
                    r << x.block(lay.skeleton(i)).middleCols(60, 3), x.block(lay.skeleton(i)).middleCols(63, 3);
                    roots.push_back(r);
                }
            }
            row["csr"] = csr(objs, hands);
            row["csiou"] = csiou(objs, hands, gt_objs, gt_hands);
            if (human) row["crr"] = crr(objs, roots);
        }
        if (m > 1) {
            double iv = 0.0, id = 0.0;
            int pairs = 0;
            for (int a = 0; a < m; ++a) {
                for (int b = a + 1; b < m; ++b) {
                    const auto ip = interpenetration(objs[static_cast<std::size_t>(a)], objs[static_cast<std::size_t>(b)], voxel);
                    iv += ip.volume_cm3;
                    id = std::max(id, ip.depth_mm);
                    ++pairs;
                }
            }
            row["iv_cm3"] = iv / pairs;
            row["id_mm"] = id;
            const BandDecomposer dec(x.frames(), cutoff, band_mode(cfg));
            row["rel_ac_energy"] = band_energy(dec.ac(x.block(lay.rigid_relative(1, 0))));
        }
        csv += std::to_string(k) + "," + to_string(spec.family) + "," + std::to_string(x.frames());
        for (const auto& c : cols) {
            csv += "," + fmt(row.at(c));
            columns[c].push_back(row.at(c));
        }
        csv += "\n";
        groups[spec.seed].push_back(track(x));
        all_tracks.push_back(track(x));
    }
    write_file(run.output("metrics.csv"), csv);

    json summary{{"count", states.size()}};
    json means = json::object();
    for (const auto& c : cols) means[c] = mean_of(columns[c]);
    summary["mean"] = means;
    std::vector<std::vector<Matrix>> multi;
    for (auto& [s, g] : groups) {
        if (g.size() >= 2) multi.push_back(g);
    }
    const bool same_len = std::all_of(all_tracks.begin(), all_tracks.end(),
                                      [&](const Matrix& t) { return t.rows() == all_tracks.front().rows(); });
    if (all_tracks.size() >= 2 && same_len) {
        json div = json::object();
        div["od"] = mean_pairwise_distance(all_tracks);
        if (!multi.empty()) div["sd"] = diversity(multi).sd;
        summary["diversity"] = div;
    }
    write_file(run.output("metrics.json"), summary.dump(2) + "\n");
    run.log << "evaluated " << states.size() << " sequences\n";
}

void cmd_decompose(Run& run) {
    const auto& cfg = run.cfg;
    std::vector<SceneSpec> specs;
    std::vector<HighOrderState> states;
    load_states(run.input("input"), specs, states);
    const int cutoff = cfg.get_int("cutoff");
    const auto mode = band_mode(cfg);
    std::string csv = "seq,block,dc_energy,ac_energy,discarded_energy\n";
    for (std::size_t k = 0; k < states.size(); ++k) {
        const auto& x = states[k];
        require_cutoff(x.frames(), cutoff);
        for (const auto& b : x.layout.blocks()) {
            const auto c = analyze(Matrix(x.block(b)));
            const auto bands = split_bands(c, cutoff, mode);
            csv += std::to_string(k) + "," + b.name() + "," + fmt(band_energy(bands.dc)) + "," +
                   fmt(band_energy(bands.ac)) + "," + fmt(band_energy(discarded_band(c, cutoff, mode))) + "\n";
        }
    }
    write_file(run.output("bands.csv"), csv);
}

// E[x0 | x_t] with x0 ~ N(scene state, v0 I), one scene per condition.
class SceneOracle : public Denoiser {
public:
    SceneOracle(std::vector<ConditionInputs>& conds, std::vector<Matrix> means, double v0, NoiseSchedule sched)
        : base_(conds.data()), means_(std::move(means)), v0_(v0), sched_(std::move(sched)) {}

    std::vector<Matrix> predict_x0(const std::vector<Matrix>& x_t, int t,
                                   const std::vector<const ConditionInputs*>& cond) const override {
        std::vector<Matrix> out;
        for (std::size_t k = 0; k < x_t.size(); ++k) {
            const auto idx = static_cast<std::size_t>(cond[k] - base_);
            out.push_back(analytic_gaussian_denoise(means_.at(idx), v0_, x_t[k], t, sched_));
        }
        return out;
    }

private:
    const ConditionInputs* base_;
    std::vector<Matrix> means_;
    double v0_;
    NoiseSchedule sched_;
};

void cmd_sync_bench(Run& run) {
    const auto& cfg = run.cfg;
    const int count = cfg.get_int("bench_sequences");
    const auto seed = cfg.get_u64("seed");
    std::unique_ptr<Denoiser> net;
    std::vector<ConditionInputs> conds;
    StateLayout layout;
    NoiseSchedule sched;
    Eigen::Index frames = 0;
    if (!cfg.get("checkpoint").empty()) {
        const auto ckpt = run.input("checkpoint");
        auto trained = std::make_unique<TrainableDenoiser>(TrainableDenoiser::load(ckpt));
        const auto& d = trained->config();
        const GeometryEncoder enc(checkpoint_extra(ckpt).at("encoder_seed").get<std::uint64_t>());
        for (const auto& s : condition_specs(cfg, d.m, d.n, d.joints, d.frames, count)) {
            conds.push_back(make_condition(s, scene_shapes(s), enc, d.frames));
        }
        layout = trained->layout();
        sched = trained->schedule();
        frames = d.frames;
        net = std::move(trained);
    } else {
        const int m = cfg.get_int("m"), n = cfg.get_int("n"), joints = cfg.get_int("joints");
        frames = cfg.get_int("frames");
        layout = StateLayout(m, n, joints);
        sched = make_schedule(cfg.get_int("steps"), cfg.get_double("beta_min"), cfg.get_double("beta_max"));
        std::vector<Matrix> means;
        for (const auto& s : condition_specs(cfg, m, n, joints, static_cast<int>(frames), count)) {
            means.push_back(gen_scene(s).state.data);
            ConditionInputs c;
            c.mask = Vector::Ones(frames);
            conds.push_back(c);
        }
        net = std::make_unique<SceneOracle>(conds, std::move(means), cfg.get_double("bench_variance"), sched);
    }
    SampleRequest req;
    req.rows = frames;
    req.cols = layout.width();
    req.layout = &layout;
    req.batch = cfg.get_int("sample_batch");
    for (int k = 0; k < count; ++k) {
        req.cond.push_back(&conds[static_cast<std::size_t>(k)]);
        req.seeds.push_back(derive_seed(seed, {kStreamSample, static_cast<std::uint64_t>(k)}));
    }

    std::string csv = "sync,interval,lambda_exp,sync_steps,lambda_bar,mean_sigma_ratio,min_sigma_ratio,alignment_residual\n";
    auto run_one = [&](const SyncConfig& sc) {
        SampleStats st;
        const auto xs = sample(*net, req, sched, sc, &st);
        std::vector<double> res;
        for (const auto& x : xs) res.push_back(alignment_residual(x, layout));
        const double mean_ratio = st.sigma_ratio.empty() ? 1.0 : mean_of(st.sigma_ratio);
        const double min_ratio =
            st.sigma_ratio.empty() ? 1.0 : *std::min_element(st.sigma_ratio.begin(), st.sigma_ratio.end());
        csv += std::string(sc.enabled ? "on" : "off") + "," + (sc.enabled ? std::to_string(sc.interval) : "") + "," +
               (sc.enabled ? fmt(sc.lambda_exp) : "") + "," + std::to_string(st.sync_steps) + "," + fmt(st.lambda_bar) +
               "," + fmt(mean_ratio) + "," + fmt(min_ratio) + "," + fmt(mean_of(res)) + "\n";
        run.log << (sc.enabled ? "s=" + std::to_string(sc.interval) + " lambda_exp=" + fmt(sc.lambda_exp) : "no sync")
                << " residual " << mean_of(res) << "\n";
    };
    SyncConfig base = sync_config(cfg);
    base.enabled = false;
    run_one(base);
    for (int s : cfg.get_int_list("bench_intervals")) {
        for (double l : cfg.get_double_list("bench_lambdas")) {
            SyncConfig sc = base;
            sc.enabled = true;
            sc.interval = s;
            sc.lambda_exp = l;
            run_one(sc);
        }
    }
    write_file(run.output("sync_bench.csv"), csv);
}

}  // namespace

void run_command(const std::string& command, const RunConfig& cfg, std::ostream& log) {
    cfg.validate();
    Run run{cfg, fs::path(cfg.get("out")), log, {}, {}, {}};
    fs::create_directories(run.out);
    if (command == "gen-data") cmd_gen_data(run);
    else if (command == "train") cmd_train(run);
    else if (command == "sample") cmd_sample(run);
    else if (command == "eval") cmd_eval(run);
    else if (command == "decompose") cmd_decompose(run);
    else if (command == "sync-bench") cmd_sync_bench(run);
    else throw ConfigError("unknown command '" + command + "'");
    write_manifest(run, command);
}

bool rerun_manifest(const std::string& manifest_path, const std::string& out, std::ostream& log) {
    json manifest;
    try {
        manifest = json::parse(read_file(manifest_path));
    } catch (const json::exception& e) {
        throw FormatError(manifest_path + ": " + e.what());
    }
    RunConfig cfg = RunConfig::defaults();
    for (const auto& [k, v] : manifest.at("config").items()) cfg.set(k, v.get<std::string>());
    if (!out.empty()) cfg.set("out", out);
    const std::string recorded = manifest.at("config_hash");
    if (hex64(cfg.hash()) != recorded) throw FormatError("manifest: config hash does not match its config");
    run_command(manifest.at("command"), cfg, log);
    bool ok = true;
    for (const auto& [name, hash] : manifest.at("outputs").items()) {
        const auto now = hex64(file_hash((fs::path(cfg.get("out")) / name).string()));
        const bool same = now == hash.get<std::string>();
        log << (same ? "same     " : "DIFFERS  ") << name << " " << now << "\n";
        ok = ok && same;
    }
    return ok;
}

int cli_main(int argc, char** argv) {
    CLI::App app{"mbsync: multi-body motion diffusion with explicit synchronization"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    std::string config_path, out_dir, manifest_path;
    std::vector<std::string> overrides;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"gen-data", "Generate synthetic scenes into dataset.bin"},
        {"train", "Train the denoiser on dataset=<file>"},
        {"sample", "Sample trajectories from checkpoint=<file>"},
        {"eval", "Metrics of input=<trajectories|dataset> against gt (regenerated when unset)"},
        {"decompose", "Per-block dc / ac / discarded band energies of input=<file>"},
        {"sync-bench", "Alignment residual and sigma ratios over sync intervals and lambda_exp"},
        {"show-config", "Print the resolved configuration and its hash"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("-c,--config", config_path, "key = value config file")->check(CLI::ExistingFile);
        sub->add_option("-s,--set", overrides, "key=value override (repeatable)");
        sub->add_option("-o,--out", out_dir, "output directory");
    }
    auto* rerun = app.add_subcommand("rerun", "Re-run a manifest and compare output hashes");
    rerun->add_option("manifest", manifest_path, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);
    rerun->add_option("-o,--out", out_dir, "output directory (default: the recorded one)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (rerun->parsed()) return rerun_manifest(manifest_path, out_dir, std::cerr) ? 0 : 1;
        const std::string command = app.get_subcommands().front()->get_name();
        RunConfig cfg = RunConfig::defaults();
        if (!config_path.empty()) cfg.load_file(config_path);
        for (const auto& o : overrides) cfg.set_assignment(o);
        if (!out_dir.empty()) cfg.set("out", out_dir);
        if (command == "show-config") {
            cfg.validate();
            for (const auto& [k, v] : cfg.values()) std::cout << k << " = " << v << "\n";
            std::cout << "# config_hash " << hex64(cfg.hash()) << "\n";
            return 0;
        }
        run_command(command, cfg, std::cerr);
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace mbsync
