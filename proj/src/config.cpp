#include "lvd/config.hpp"

#include <functional>
#include <sstream>

namespace lvd {

namespace {

struct Entry {
    std::string section, key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int64_t out = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(strcat_("config: expected an integer for ", key, ", got '", v, "'"));
    }
}

double parse_real(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(strcat_("config: expected a number for ", key, ", got '", v, "'"));
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(strcat_("config: expected a boolean for ", key, ", got '", v, "'"));
}

std::vector<int64_t> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int64_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(parse_int(key, item));
    if (out.empty()) throw ConfigError("config: empty list for " + key);
    return out;
}

std::string fmt_int_list(const std::vector<int64_t>& v) {
    std::ostringstream os;
    for (size_t i = 0; i < v.size(); i++) os << (i ? "," : "") << v[i];
    return os.str();
}

std::string fmt_real(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

#define INT_ENTRY(sec, name, field)                                            \
    {sec, name, [](const RunConfig& c) { return strcat_(c.field); },            \
     [](RunConfig& c, const std::string& v) {                                   \
         c.field = static_cast<decltype(c.field)>(parse_int(name, v));          \
     }}
#define REAL_ENTRY(sec, name, field)                                           \
    {sec, name, [](const RunConfig& c) { return fmt_real(c.field); },           \
     [](RunConfig& c, const std::string& v) { c.field = parse_real(name, v); }}
#define BOOL_ENTRY(sec, name, field)                                           \
    {sec, name,                                                                 \
     [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); },\
     [](RunConfig& c, const std::string& v) { c.field = parse_bool(name, v); }}

const std::vector<Entry>& schema() {
    static const std::vector<Entry> entries = {
        INT_ENTRY("data", "n_speakers", n_speakers),
        INT_ENTRY("data", "clips_per_speaker", clips_per_speaker),
        REAL_ENTRY("data", "clip_duration", clip_duration),
        INT_ENTRY("data", "height", height),
        INT_ENTRY("data", "width", width),
        INT_ENTRY("data", "neutral_every", neutral_every),

        INT_ENTRY("model", "channels", model.channels),
        INT_ENTRY("model", "frames", model.frames),
        INT_ENTRY("model", "base_width", model.base_width),
        {"model", "channel_mult",
         [](const RunConfig& c) { return fmt_int_list(c.model.channel_mult); },
         [](RunConfig& c, const std::string& v) {
             c.model.channel_mult = parse_int_list("channel_mult", v);
         }},
        {"model", "attn_levels",
         [](const RunConfig& c) { return fmt_int_list(c.model.attn_levels); },
         [](RunConfig& c, const std::string& v) {
             c.model.attn_levels = parse_int_list("attn_levels", v);
         }},
        INT_ENTRY("model", "blocks_per_level", model.blocks_per_level),
        INT_ENTRY("model", "embed_dim", model.embed_dim),
        INT_ENTRY("model", "heads", model.heads),
        INT_ENTRY("model", "gn_groups", model.gn_groups),
        INT_ENTRY("model", "temporal_kernel", model.temporal_kernel),

        REAL_ENTRY("schedule", "sigma_min", sched.sigma_min),
        REAL_ENTRY("schedule", "sigma_max", sched.sigma_max),
        REAL_ENTRY("schedule", "rho", sched.rho),
        REAL_ENTRY("schedule", "sigma_data", sched.sigma_data),
        REAL_ENTRY("schedule", "p_mean", sched.p_mean),
        REAL_ENTRY("schedule", "p_std", sched.p_std),
        INT_ENTRY("schedule", "steps", sched.steps),
        {"schedule", "train_sigma_law",
         [](const RunConfig& c) {
             return std::string(c.sched.law == NoiseSchedule::TrainSigmaLaw::log_normal
                                    ? "log_normal"
                                    : "uniform_ladder");
         },
         [](RunConfig& c, const std::string& v) {
             if (v == "log_normal")
                 c.sched.law = NoiseSchedule::TrainSigmaLaw::log_normal;
             else if (v == "uniform_ladder")
                 c.sched.law = NoiseSchedule::TrainSigmaLaw::uniform_ladder;
             else
                 throw ConfigError("config: train_sigma_law must be log_normal or uniform_ladder");
         }},

        INT_ENTRY("train", "epochs", train.epochs),
        INT_ENTRY("train", "warmup_epochs", train.warmup_epochs),
        INT_ENTRY("train", "batch_size", train.batch_size),
        REAL_ENTRY("train", "base_lr", train.base_lr),
        REAL_ENTRY("train", "cfg_mask_prob", train.cfg_mask_prob),
        REAL_ENTRY("train", "augment_prob", train.augment_prob),
        REAL_ENTRY("train", "ema_decay", train.ema_decay),
        REAL_ENTRY("train", "weight_decay", train.weight_decay),
        INT_ENTRY("train", "windows_per_clip", train.windows_per_clip),
        INT_ENTRY("train", "checkpoint_every", train.checkpoint_every),
        BOOL_ENTRY("train", "use_cfg_mask", train.use_cfg_mask),
        BOOL_ENTRY("train", "use_augment", train.use_augment),

        REAL_ENTRY("sampler", "guidance", sampler.guidance),
        INT_ENTRY("sampler", "steps", sampler.steps),

        INT_ENTRY("eval", "batch", eval_batch),
        INT_ENTRY("eval", "lc_steps", eval_lc_steps),
        INT_ENTRY("eval", "lc_seed", eval_lc_seed),
    };
    return entries;
}

#undef INT_ENTRY
#undef REAL_ENTRY
#undef BOOL_ENTRY

const Entry* find_entry(const std::string& section, const std::string& key) {
    for (const Entry& e : schema())
        if (e.section == section && e.key == key) return &e;
    return nullptr;
}

void note(std::vector<std::pair<std::string, ValueSource>>* prov,
          const std::string& dotted, ValueSource src) {
    if (!prov) return;
    for (auto& [k, s] : *prov)
        if (k == dotted) {
            s = src;
            return;
        }
    prov->emplace_back(dotted, src);
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig parse_config_text(const std::string& text, RunConfig base,
                            std::vector<std::pair<std::string, ValueSource>>* prov) {
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        lineno++;
        std::string t = trim(line);
        size_t hash = t.find('#');
        if (hash != std::string::npos) t = trim(t.substr(0, hash));
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError(strcat_("config line ", lineno, ": malformed section header"));
            section = trim(t.substr(1, t.size() - 2));
            bool known = false;
            for (const Entry& e : schema())
                if (e.section == section) known = true;
            if (!known)
                throw ConfigError(strcat_("config line ", lineno, ": unknown section [",
                                          section, "]"));
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(strcat_("config line ", lineno, ": expected key = value"));
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (section.empty())
            throw ConfigError(strcat_("config line ", lineno, ": key '", key,
                                      "' outside any section"));
        const Entry* e = find_entry(section, key);
        if (!e)
            throw ConfigError(strcat_("config line ", lineno, ": unknown key '", section,
                                      ".", key, "'"));
        e->set(base, value);
        note(prov, section + "." + key, ValueSource::file);
    }
    return base;
}

void apply_profile(RunConfig& cfg, const std::string& name,
                   std::vector<std::pair<std::string, ValueSource>>* prov) {
    std::vector<std::pair<std::string, std::string>> kv;
    if (name == "paper") {
        kv = {{"train.epochs", "200"},
              {"train.warmup_epochs", "20"},
              {"train.batch_size", "32"},
              {"train.base_lr", "6e-5"}};
    } else if (name == "desk") {
        kv = {{"train.epochs", "60"},
              {"train.warmup_epochs", "20"},
              {"train.batch_size", "8"},
              {"train.base_lr", "1e-4"}};
    } else {
        throw ConfigError("unknown profile: " + name + " (want paper or desk)");
    }
    for (const auto& [dotted, value] : kv) {
        size_t dot = dotted.find('.');
        const Entry* e = find_entry(dotted.substr(0, dot), dotted.substr(dot + 1));
        e->set(cfg, value);
        note(prov, dotted, ValueSource::profile);
    }
}

void apply_override(RunConfig& cfg, const std::string& dotted_key,
                    const std::string& value,
                    std::vector<std::pair<std::string, ValueSource>>* prov) {
    size_t dot = dotted_key.find('.');
    if (dot == std::string::npos)
        throw ConfigError("override must be section.key=value, got " + dotted_key);
    const Entry* e = find_entry(dotted_key.substr(0, dot), dotted_key.substr(dot + 1));
    if (!e) throw ConfigError("unknown key '" + dotted_key + "'");
    e->set(cfg, value);
    note(prov, dotted_key, ValueSource::flag);
}

std::string resolved_config_text(
    const RunConfig& cfg,
    const std::vector<std::pair<std::string, ValueSource>>& prov) {
    auto source_of = [&](const std::string& dotted) {
        for (const auto& [k, s] : prov)
            if (k == dotted) {
                switch (s) {
                    case ValueSource::profile: return "profile";
                    case ValueSource::file: return "file";
                    case ValueSource::flag: return "flag";
                    default: return "default";
                }
            }
        return "default";
    };
    std::ostringstream os;
    std::string section;
    for (const Entry& e : schema()) {
        if (e.section != section) {
            if (!section.empty()) os << "\n";
            os << "[" << e.section << "]\n";
            section = e.section;
        }
        os << e.key << " = " << e.get(cfg) << "  # " << source_of(e.section + "." + e.key)
           << "\n";
    }
    return os.str();
}

void propagate_seed(RunConfig& cfg) {
    cfg.train.seed = cfg.seed;
    cfg.sampler.seed = cfg.seed;
}

}  // namespace lvd
