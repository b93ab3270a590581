#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "entroguard/attacks.hpp"
#include "entroguard/errors.hpp"
#include "entroguard/guard.hpp"
#include "entroguard/model.hpp"
#include "entroguard/report.hpp"
#include "entroguard/rng.hpp"

namespace entroguard {

struct CorpusConfig {
    int n_sentences = 600;
    int n_queries = 40;
};

struct BaselineConfig {
    float gaussian_sigma = 0.01f;
    PgdConfig pgd;
};

struct EvalConfig {
    int privacy_count = 32;    // sentences scored by the learning attack
    int opt_attack_count = 8;  // sentences scored by the (slow) search attack
    int k = 5;                 // retrieval cutoff
};

// One flat experiment description; every tunable lives here so a run is fully
// determined by (config, seed).
struct ExperimentConfig {
    std::uint64_t seed = 7;
    std::string out_dir = "out";
    CorpusConfig corpus;
    EncoderConfig model;     // encoder shape; decoder reuses dim/heads/ff
    int decoder_blocks = 4;
    EncoderTrainConfig encoder;
    RecoveryTrainConfig recovery;  // attacker and surrogate share the schedule
    GuardTrainConfig guard;
    AdaptConfig adapt;
    OptimizationAttackConfig attack;
    BaselineConfig baseline;
    SweepThresholds thresholds;
    EvalConfig eval;

    DecoderConfig decoder_config() const {
        DecoderConfig d;
        d.vocab_size = model.vocab_size;
        d.embed_dim = model.dim;
        d.dim = model.dim;
        d.heads = model.heads;
        d.blocks = decoder_blocks;
        d.ff = model.ff;
        d.max_len = model.max_len;
        return d;
    }

    void validate() const;
};

namespace config_detail {

enum class Kind { Int, Float, Double, U64, Str };

struct Field {
    const char* key;
    Kind kind;
    void* ptr;
};

// the single key table shared by load, save, and hashing
inline std::vector<Field> fields(ExperimentConfig& c) {
    return {
        {"seed", Kind::U64, &c.seed},
        {"out_dir", Kind::Str, &c.out_dir},
        {"corpus.n_sentences", Kind::Int, &c.corpus.n_sentences},
        {"corpus.n_queries", Kind::Int, &c.corpus.n_queries},
        {"model.vocab_size", Kind::Int, &c.model.vocab_size},
        {"model.dim", Kind::Int, &c.model.dim},
        {"model.heads", Kind::Int, &c.model.heads},
        {"model.encoder_blocks", Kind::Int, &c.model.blocks},
        {"model.decoder_blocks", Kind::Int, &c.decoder_blocks},
        {"model.ff", Kind::Int, &c.model.ff},
        {"model.max_len", Kind::Int, &c.model.max_len},
        {"encoder.steps", Kind::Int, &c.encoder.steps},
        {"encoder.batch", Kind::Int, &c.encoder.batch},
        {"encoder.lr", Kind::Float, &c.encoder.lr},
        {"encoder.tau", Kind::Float, &c.encoder.tau},
        {"encoder.weight_decay", Kind::Float, &c.encoder.weight_decay},
        {"recovery.steps", Kind::Int, &c.recovery.steps},
        {"recovery.batch", Kind::Int, &c.recovery.batch},
        {"recovery.lr", Kind::Float, &c.recovery.lr},
        {"recovery.weight_decay", Kind::Float, &c.recovery.weight_decay},
        {"guard.alpha_start", Kind::Float, &c.guard.alpha_start},
        {"guard.beta_start", Kind::Float, &c.guard.beta_start},
        {"guard.gamma_start", Kind::Float, &c.guard.gamma_start},
        {"guard.alpha_end", Kind::Float, &c.guard.alpha_end},
        {"guard.beta_end", Kind::Float, &c.guard.beta_end},
        {"guard.gamma_end", Kind::Float, &c.guard.gamma_end},
        {"guard.supervised_blocks", Kind::Int, &c.guard.n_supervised_blocks},
        {"guard.steps", Kind::Int, &c.guard.steps},
        {"guard.batch", Kind::Int, &c.guard.batch},
        {"guard.lr", Kind::Float, &c.guard.lr},
        {"guard.weight_decay", Kind::Float, &c.guard.weight_decay},
        {"adapt.epsilon", Kind::Float, &c.adapt.epsilon},
        {"adapt.rho", Kind::Float, &c.adapt.rho},
        {"adapt.subset_fraction", Kind::Float, &c.adapt.subset_fraction},
        {"adapt.max_iter", Kind::Int, &c.adapt.max_iter},
        {"attack.max_iters", Kind::Int, &c.attack.max_iters},
        {"attack.candidates_per_position", Kind::Int, &c.attack.candidates_per_position},
        {"attack.min_len", Kind::Int, &c.attack.min_len},
        {"attack.max_len", Kind::Int, &c.attack.max_len},
        {"baseline.gaussian_sigma", Kind::Float, &c.baseline.gaussian_sigma},
        {"baseline.pgd_step_size", Kind::Float, &c.baseline.pgd.step_size},
        {"baseline.pgd_steps", Kind::Int, &c.baseline.pgd.steps},
        {"baseline.pgd_bound", Kind::Float, &c.baseline.pgd.bound},
        {"baseline.pgd_sigma_equivalent", Kind::Float, &c.baseline.pgd.sigma_equivalent},
        {"baseline.pgd_rho", Kind::Float, &c.baseline.pgd.rho},
        {"thresholds.attack_bleu2", Kind::Double, &c.thresholds.attack_bleu2},
        {"thresholds.opt_attack_bleu2", Kind::Double, &c.thresholds.opt_attack_bleu2},
        {"thresholds.retrieval_relative", Kind::Double, &c.thresholds.retrieval_relative},
        {"eval.privacy_count", Kind::Int, &c.eval.privacy_count},
        {"eval.opt_attack_count", Kind::Int, &c.eval.opt_attack_count},
        {"eval.k", Kind::Int, &c.eval.k},
    };
}

inline std::string value_to_string(const Field& f) {
    switch (f.kind) {
        case Kind::Int: return std::to_string(*static_cast<int*>(f.ptr));
        case Kind::U64: return std::to_string(*static_cast<std::uint64_t*>(f.ptr));
        case Kind::Float: return format_number(*static_cast<float*>(f.ptr));
        case Kind::Double: return format_number(*static_cast<double*>(f.ptr));
        case Kind::Str: return *static_cast<std::string*>(f.ptr);
    }
    throw ContractError("unreachable");
}

inline void parse_into(const Field& f, const std::string& value, int line_no) {
    const std::string where = "line " + std::to_string(line_no) + ": " + f.key;
    try {
        std::size_t used = 0;
        switch (f.kind) {
            case Kind::Int:
                *static_cast<int*>(f.ptr) = std::stoi(value, &used);
                break;
            case Kind::U64:
                *static_cast<std::uint64_t*>(f.ptr) = std::stoull(value, &used);
                break;
            case Kind::Float:
                *static_cast<float*>(f.ptr) = std::stof(value, &used);
                break;
            case Kind::Double:
                *static_cast<double*>(f.ptr) = std::stod(value, &used);
                break;
            case Kind::Str:
                *static_cast<std::string*>(f.ptr) = value;
                return;
        }
        if (used != value.size()) throw ConfigError(where + ": trailing characters in value");
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError(where + ": cannot parse value '" + value + "'");
    }
}

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace config_detail

inline void ExperimentConfig::validate() const {
    adapt.validate();
    auto positive = [](long long v, const char* what) {
        if (v < 1) throw ConfigError(std::string(what) + " must be >= 1");
    };
    positive(corpus.n_sentences, "corpus.n_sentences");
    positive(corpus.n_queries, "corpus.n_queries");
    positive(model.dim, "model.dim");
    positive(model.heads, "model.heads");
    positive(model.blocks, "model.encoder_blocks");
    positive(decoder_blocks, "model.decoder_blocks");
    positive(model.ff, "model.ff");
    positive(encoder.steps, "encoder.steps");
    positive(recovery.steps, "recovery.steps");
    positive(guard.steps, "guard.steps");
    positive(eval.k, "eval.k");
    if (model.dim % model.heads != 0) throw ConfigError("model.dim must be divisible by heads");
    if (model.vocab_size < 8) throw ConfigError("model.vocab_size must be >= 8");
    if (model.max_len < 3) throw ConfigError("model.max_len must be >= 3");
    if (encoder.batch < 2) throw ConfigError("encoder.batch must be >= 2 (in-batch negatives)");
    if (!(encoder.tau > 0.0f)) throw ConfigError("encoder.tau must be positive");
    if (baseline.gaussian_sigma < 0.0f) throw ConfigError("baseline.gaussian_sigma must be >= 0");
    if (!(baseline.pgd.rho > 0.0f && baseline.pgd.rho < 1.0f))
        throw ConfigError("baseline.pgd_rho must be in (0,1)");
    if (attack.min_len < 1 || attack.max_len < attack.min_len)
        throw ConfigError("attack length range invalid");
    if (out_dir.empty()) throw ConfigError("out_dir must be non-empty");
}

// `key = value` lines, '#' comments, dotted section prefixes in the key.
// Unknown keys are rejected; absent keys keep their defaults.
inline ExperimentConfig parse_config(std::istream& in) {
    ExperimentConfig cfg;
    auto table = config_detail::fields(cfg);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = config_detail::trim(line.substr(0, eq));
        const std::string value = config_detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        bool found = false;
        for (auto& f : table) {
            if (key == f.key) {
                config_detail::parse_into(f, value, line_no);
                found = true;
                break;
            }
        }
        if (!found)
            throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse_config(in);
}

inline std::string save_config(const ExperimentConfig& cfg) {
    auto table = config_detail::fields(const_cast<ExperimentConfig&>(cfg));
    std::string out;
    for (const auto& f : table) {
        out += f.key;
        out += " = ";
        out += config_detail::value_to_string(f);
        out += '\n';
    }
    return out;
}

inline void save_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config file: " + path);
    out << save_config(cfg);
}

// stable hash of the canonical serialization; stamped into every report
inline std::string config_hash(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a(save_config(cfg))));
    return buf;
}

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return save_config(a) == save_config(b);
}

}  // namespace entroguard
