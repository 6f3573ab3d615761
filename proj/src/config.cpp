#include "vaedef/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace vaedef {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = s.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(trim(s.substr(start)));
            break;
        }
        out.push_back(trim(s.substr(start, pos - start)));
        start = pos + 1;
    }
    return out;
}

}  // namespace

void ConfigMap::set(const std::string& key, const std::string& value, int line) {
    values_[key] = value;
    lines_[key] = line;
}

bool ConfigMap::has(const std::string& key) const { return values_.count(key) > 0; }

int ConfigMap::line_of(const std::string& key) const {
    auto it = lines_.find(key);
    return it == lines_.end() ? 0 : it->second;
}

void ConfigMap::fail(const std::string& key, const std::string& what) const {
    std::ostringstream msg;
    msg << source_;
    if (int ln = line_of(key)) msg << ":" << ln;
    msg << ": key '" << key << "': " << what;
    throw ConfigError(msg.str());
}

std::string ConfigMap::get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) fail(key, "missing required key");
    return it->second;
}

std::string ConfigMap::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double ConfigMap::get_double(const std::string& key, std::optional<double> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        if (fallback) return *fallback;
        fail(key, "missing required key");
    }
    const std::string& v = it->second;
    double out = 0.0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
        fail(key, "not a number: '" + v + "'");
    return out;
}

std::int64_t ConfigMap::get_int(const std::string& key,
                                std::optional<std::int64_t> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        if (fallback) return *fallback;
        fail(key, "missing required key");
    }
    const std::string& v = it->second;
    std::int64_t out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
        fail(key, "not an integer: '" + v + "'");
    return out;
}

std::uint64_t ConfigMap::get_u64(const std::string& key,
                                 std::optional<std::uint64_t> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        if (fallback) return *fallback;
        fail(key, "missing required key");
    }
    const std::string& v = it->second;
    std::uint64_t out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
        fail(key, "not an unsigned integer: '" + v + "'");
    return out;
}

bool ConfigMap::get_bool(const std::string& key, std::optional<bool> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        if (fallback) return *fallback;
        fail(key, "missing required key");
    }
    const std::string& v = it->second;
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(key, "not a boolean (true/false/1/0): '" + v + "'");
}

std::vector<double> ConfigMap::get_double_list(const std::string& key,
                                               const std::vector<double>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    for (const auto& part : split_commas(it->second)) {
        double v = 0.0;
        auto res = std::from_chars(part.data(), part.data() + part.size(), v);
        if (res.ec != std::errc{} || res.ptr != part.data() + part.size())
            fail(key, "list entry not a number: '" + part + "'");
        out.push_back(v);
    }
    return out;
}

std::vector<std::size_t> ConfigMap::get_size_list(
    const std::string& key, const std::vector<std::size_t>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::size_t> out;
    for (const auto& part : split_commas(it->second)) {
        std::size_t v = 0;
        auto res = std::from_chars(part.data(), part.data() + part.size(), v);
        if (res.ec != std::errc{} || res.ptr != part.data() + part.size())
            fail(key, "list entry not an unsigned integer: '" + part + "'");
        out.push_back(v);
    }
    return out;
}

ConfigMap parse_config_text(const std::string& text, const std::string& source_name) {
    ConfigMap map;
    map.set_source(source_name);
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source_name + ":" + std::to_string(line_no) +
                              ": expected key=value, got '" + line + "'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(source_name + ":" + std::to_string(line_no) + ": empty key");
        if (map.has(key))
            throw ConfigError(source_name + ":" + std::to_string(line_no) +
                              ": duplicate key '" + key + "'");
        map.set(key, value, line_no);
    }
    return map;
}

ConfigMap parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

void ExperimentConfig::validate() const {
    auto bad = [](const std::string& what) { throw ConfigError(what); };
    if (dataset_kind == DatasetKind::kIdx) {
        for (const std::string* p : {&dataset_images, &dataset_labels}) {
            std::ifstream f(*p, std::ios::binary);
            if (!f) bad("dataset file does not exist: " + *p);
        }
    } else {
        if (dataset_classes < 1 || dataset_classes > 10)
            bad("dataset.classes must be in [1, 10]");
        if (dataset_side < 8) bad("dataset.side must be >= 8");
    }
    if (latent_dim == 0) bad("model.latent_dim must be >= 1");
    if (hidden.empty()) bad("model.hidden must name at least one layer width");
    for (std::size_t h : hidden)
        if (h == 0) bad("model.hidden widths must be >= 1");
    if (beta <= 0) bad("model.beta must be > 0");
    if (train.epochs == 0) bad("train.epochs must be >= 1");
    if (train.batch_size == 0) bad("train.batch_size must be >= 1");
    if (train.learning_rate <= 0) bad("train.learning_rate must be > 0");
    attack.validate();
    hmc.validate();
    if (eval_per_class == 0) bad("eval.per_class must be >= 1");
    for (double r : sweep_radii)
        if (r < 0) bad("sweep.radii entries must be >= 0");
    if (output_dir.empty()) bad("output.dir must not be empty");
}

ExperimentConfig experiment_config_from_map(const ConfigMap& map) {
    ExperimentConfig cfg;
    const std::string kind = map.get_string("dataset.kind", "synthetic");
    if (kind == "synthetic") {
        cfg.dataset_kind = DatasetKind::kSynthetic;
    } else if (kind == "idx") {
        cfg.dataset_kind = DatasetKind::kIdx;
        cfg.dataset_images = map.get_string("dataset.images");
        cfg.dataset_labels = map.get_string("dataset.labels");
    } else {
        throw ConfigError(map.source() + ": dataset.kind must be 'synthetic' or 'idx', got '" +
                          kind + "'");
    }
    cfg.dataset_per_class = static_cast<std::size_t>(map.get_u64("dataset.per_class", 200));
    cfg.dataset_classes = static_cast<int>(map.get_int("dataset.classes", 4));
    cfg.dataset_side = static_cast<std::size_t>(map.get_u64("dataset.side", 14));

    cfg.latent_dim = static_cast<std::size_t>(map.get_u64("model.latent_dim", 16));
    cfg.hidden = map.get_size_list("model.hidden", {256, 128});
    cfg.beta = map.get_double("model.beta", 1.0);
    const std::string obj = map.get_string("model.objective", "elbo");
    if (obj == "elbo") cfg.objective = Objective::kElbo;
    else if (obj == "tcvae") cfg.objective = Objective::kTcVae;
    else throw ConfigError(map.source() + ": model.objective must be 'elbo' or 'tcvae'");
    const std::string fam = map.get_string("model.family", "bernoulli");
    if (fam == "bernoulli") cfg.family = DecoderFamily::kBernoulli;
    else if (fam == "gaussian") cfg.family = DecoderFamily::kGaussianFixedVar;
    else throw ConfigError(map.source() + ": model.family must be 'bernoulli' or 'gaussian'");

    cfg.train.epochs = static_cast<std::size_t>(map.get_u64("train.epochs", 20));
    cfg.train.batch_size = static_cast<std::size_t>(map.get_u64("train.batch_size", 32));
    cfg.train.learning_rate = map.get_double("train.learning_rate", 5e-4);
    cfg.train.lr_decay_patience =
        static_cast<std::size_t>(map.get_u64("train.lr_decay_patience", 10));

    cfg.attack.radius = map.get_double("attack.radius", 0.1);
    cfg.attack.steps = static_cast<std::size_t>(map.get_u64("attack.steps", 50));
    cfg.attack.step_size = map.get_double("attack.step_size", 1.0);
    cfg.attack.init_std = map.get_double("attack.init_std", 0.2);
    cfg.attack.restarts = static_cast<std::size_t>(map.get_u64("attack.restarts", 10));
    if (map.has("attack.objective")) {
        try {
            cfg.attack.objective = attack_objective_from_string(map.get_string("attack.objective"));
        } catch (const std::exception& e) {
            throw ConfigError(map.source() + ": attack.objective: " + e.what());
        }
    }
    cfg.attack.box_constraint = map.get_bool("attack.box_constraint", true);
    cfg.attack_chain_steps = static_cast<std::size_t>(map.get_u64("attack.chain_steps", 5));
    cfg.attack_chain_leapfrog =
        static_cast<std::size_t>(map.get_u64("attack.chain_leapfrog", 5));

    cfg.hmc.steps = static_cast<std::size_t>(map.get_u64("hmc.steps", 500));
    cfg.hmc.step_size = map.get_double("hmc.step_size", 0.1);
    cfg.hmc.leapfrog_steps = static_cast<std::size_t>(map.get_u64("hmc.leapfrog", 20));
    cfg.hmc.adaptive = map.get_bool("hmc.adaptive", true);
    cfg.hmc.target_acceptance = map.get_double("hmc.target_acceptance", 0.9);
    cfg.hmc.adapt_gain = map.get_double("hmc.adapt_gain", 0.01);

    cfg.eval_per_class = static_cast<std::size_t>(map.get_u64("eval.per_class", 5));
    cfg.sweep_radii = map.get_double_list("sweep.radii", cfg.sweep_radii);
    cfg.seed = map.get_u64("seed", 1);
    cfg.train.seed = map.get_u64("train.seed", RngStream::derive(cfg.seed, "train", 0));
    cfg.output_dir = map.get_string("output.dir", "out");
    cfg.validate();
    return cfg;
}

std::uint64_t artifact_config_hash(const ExperimentConfig& cfg) {
    std::ostringstream s;
    s.precision(17);
    s << "dataset.kind=" << (cfg.dataset_kind == DatasetKind::kSynthetic ? "synthetic" : "idx")
      << "\n";
    if (cfg.dataset_kind == DatasetKind::kIdx)
        s << "dataset.images=" << cfg.dataset_images << "\ndataset.labels=" << cfg.dataset_labels
          << "\n";
    s << "dataset.per_class=" << cfg.dataset_per_class << "\n"
      << "dataset.classes=" << cfg.dataset_classes << "\n"
      << "dataset.side=" << cfg.dataset_side << "\n"
      << "model.latent_dim=" << cfg.latent_dim << "\nmodel.hidden=";
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) s << (i ? "," : "") << cfg.hidden[i];
    s << "\nmodel.beta=" << cfg.beta << "\n"
      << "model.objective=" << (cfg.objective == Objective::kElbo ? "elbo" : "tcvae") << "\n"
      << "model.family=" << (cfg.family == DecoderFamily::kBernoulli ? "bernoulli" : "gaussian")
      << "\n"
      << "train.epochs=" << cfg.train.epochs << "\n"
      << "train.batch_size=" << cfg.train.batch_size << "\n"
      << "train.learning_rate=" << cfg.train.learning_rate << "\n"
      << "train.lr_decay_patience=" << cfg.train.lr_decay_patience << "\n"
      << "train.seed=" << cfg.train.seed << "\n"
      << "attack.radius=" << cfg.attack.radius << "\n"
      << "attack.steps=" << cfg.attack.steps << "\n"
      << "attack.step_size=" << cfg.attack.step_size << "\n"
      << "attack.init_std=" << cfg.attack.init_std << "\n"
      << "attack.restarts=" << cfg.attack.restarts << "\n"
      << "attack.objective=" << to_string(cfg.attack.objective) << "\n"
      << "attack.box_constraint=" << (cfg.attack.box_constraint ? "true" : "false") << "\n"
      << "attack.chain_steps=" << cfg.attack_chain_steps << "\n"
      << "attack.chain_leapfrog=" << cfg.attack_chain_leapfrog << "\n"
      << "eval.per_class=" << cfg.eval_per_class << "\n"
      << "seed=" << cfg.seed << "\n";
    const std::string canon = s.str();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canon) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace vaedef
