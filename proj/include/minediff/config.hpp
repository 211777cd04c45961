#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "minediff/circumvent.hpp"
#include "minediff/denoiser.hpp"
#include "minediff/diffusion.hpp"
#include "minediff/miner.hpp"
#include "minediff/redteam.hpp"
#include "minediff/rng.hpp"
#include "minediff/schedule.hpp"
#include "minediff/worldgen.hpp"

namespace minediff {

using Json = nlohmann::json;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void check_keys(const Json& obj, const std::string& scope, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError("config: " + scope + " must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) throw ConfigError("config: unknown key " + scope + "." + it.key());
    }
}

template <class T>
void read(const Json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace detail

// Every constant of the experiment in one validated place. Unknown keys are
// rejected; omitted keys take the defaults below.
struct ExperimentConfig {
    uint64_t seed = 2024;
    std::string concept_name = "target";

    struct World {
        int data_dim = 2;
        int component_count = 6;
        double radius = 8.0;
        std::vector<int> target_components = {0, 1};
    } world;

    struct Schedule {
        int steps = 100;
        double beta_start = 1e-4;
        double beta_end = 0.05;
    } schedule;

    ModelDims model;

    struct Train {
        int dataset_size = 3000;
        double generic_prompt_frac = 0.25;
        double generic_target_bias = 0.3;
        int epochs = 400;
        int batch_size = 64;
        double lr = 0.1;
        int lr_decay_epoch = 300;
        double lr_decay_factor = 0.2;
        double clip_norm = 100.0;
    } train;

    MiningConfig miner;

    struct Verifier {
        double tau = 0.2;
        int draws_per_side = 16;
        std::string tool = "delta";  // delta | oracle
    } verifier;

    struct Circumvent {
        double alpha_c = 1.0;
        double alpha_p = 0.5;
        double r = 0.7;
        int epochs = 1000;
        int batch_size = 1;
        double lr = 0.1;
        int lr_decay_epoch = 800;
        double lr_decay_factor = 0.1;
        double clip_norm = 100.0;
        int max_loops = 64;
        int x_batch_size = 16;
        int validation_triples = 64;
        int concept_score_draws = 50;
        bool preserve_anchor = true;
        bool preserve_zero = true;
        bool preserve_neg = true;
        std::vector<std::string> anchor_tokens = {"a", "photo"};
    } circumvent;

    struct Miner {
        int pool_size = 200;
        int pool_budget_factor = 20;
    } pool;

    struct Baseline {
        int epochs = 1000;
        std::vector<std::string> prompt_tokens = {"target"};
    } baseline;

    struct Attacks {
        int conditions = 10;
        int gens_per_condition = 10;
        int steps = 600;
        double lr = 0.1;
        int lr_decay_step = 300;
        double lr_decay_factor = 0.1;
        double clip_norm = 10.0;
        int k = 3;
        int images = 100;
        int embedding_length = 8;
        GaConfig ga;
    } attacks;

    struct Metrics {
        int target_prompts = 100;
        int neutral_prompts = 100;
        int gens_per_prompt = 10;
        int frechet_samples = 500;
        int competence_gens = 500;
        int auc_per_class = 100;
        std::vector<double> gamma_grid = {1.0, 0.5, 0.0, -1.0};
        int gamma_gens = 200;
    } metrics;

    static ExperimentConfig from_json(const Json& j);
    static ExperimentConfig from_file(const std::string& path);

    Json to_json() const;
    uint64_t hash() const;
    std::string hash_hex() const;
    void validate() const;

    // ---- derived objects ----
    ConceptSpec make_world() const {
        std::vector<MixtureComponent> comps;
        for (int i = 0; i < world.component_count; ++i) {
            const double angle = 2.0 * 3.14159265358979323846 * i / world.component_count;
            MixtureComponent c;
            c.weight = 1.0 / world.component_count;
            c.mean = {world.radius * std::cos(angle), world.radius * std::sin(angle)};
            c.covariance = {1.0, 0.0, 0.0, 1.0};
            for (int t : world.target_components) {
                if (t == i) c.concept_tags.insert(concept_name);
            }
            comps.push_back(std::move(c));
        }
        return ConceptSpec(world.data_dim, std::move(comps), {concept_name});
    }

    NoiseSchedule make_schedule() const { return NoiseSchedule::linear(schedule.steps, schedule.beta_start, schedule.beta_end); }

    Vocabulary make_vocab() const {
        return Vocabulary::build(default_tokens(world.component_count, concept_name), model.embed_dim,
                                 derive_seed(seed, "vocab"));
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.epochs = train.epochs;
        t.batch_size = train.batch_size;
        t.lr = train.lr;
        t.lr_decay_epoch = train.lr_decay_epoch;
        t.lr_decay_factor = train.lr_decay_factor;
        t.clip_norm = train.clip_norm;
        return t;
    }

    CircumventConfig circumvent_config() const {
        CircumventConfig c;
        c.alpha_c = circumvent.alpha_c;
        c.alpha_p = circumvent.alpha_p;
        c.r = circumvent.r;
        c.epochs = circumvent.epochs;
        c.batch_size = circumvent.batch_size;
        c.lr = circumvent.lr;
        c.lr_decay_epoch = circumvent.lr_decay_epoch;
        c.lr_decay_factor = circumvent.lr_decay_factor;
        c.clip_norm = circumvent.clip_norm;
        c.max_loops = circumvent.max_loops;
        c.tau = verifier.tau;
        c.preserve_anchor = circumvent.preserve_anchor;
        c.preserve_zero = circumvent.preserve_zero;
        c.preserve_neg = circumvent.preserve_neg;
        return c;
    }

    ErasureRunConfig erasure_config() const {
        ErasureRunConfig e;
        e.mining = miner;
        e.circ = circumvent_config();
        e.pool_size = pool.pool_size;
        e.pool_budget_factor = pool.pool_budget_factor;
        e.verify_draws = verifier.draws_per_side;
        e.verify_oracle_tool = verifier.tool == "oracle";
        e.concept_score_draws = circumvent.concept_score_draws;
        e.x_batch_size = circumvent.x_batch_size;
        e.validation_triples = circumvent.validation_triples;
        e.anchor_tokens = circumvent.anchor_tokens;
        return e;
    }

    AttackConfig attack_config() const {
        AttackConfig a;
        a.conditions = attacks.conditions;
        a.gens_per_condition = attacks.gens_per_condition;
        a.steps = attacks.steps;
        a.lr = attacks.lr;
        a.lr_decay_step = attacks.lr_decay_step;
        a.lr_decay_factor = attacks.lr_decay_factor;
        a.clip_norm = attacks.clip_norm;
        a.k = attacks.k;
        a.embedding_length = attacks.embedding_length;
        return a;
    }
};

inline ExperimentConfig ExperimentConfig::from_json(const Json& j) {
    ExperimentConfig c;
    detail::check_keys(j, "<root>", {"seed", "concept", "world", "schedule", "model", "train", "miner", "verifier",
                                     "circumvent", "baseline", "attacks", "metrics"});
    detail::read(j, "seed", c.seed);
    detail::read(j, "concept", c.concept_name);
    if (j.contains("world")) {
        const auto& o = j.at("world");
        detail::check_keys(o, "world", {"data_dim", "component_count", "radius", "target_components"});
        detail::read(o, "data_dim", c.world.data_dim);
        detail::read(o, "component_count", c.world.component_count);
        detail::read(o, "radius", c.world.radius);
        detail::read(o, "target_components", c.world.target_components);
    }
    if (j.contains("schedule")) {
        const auto& o = j.at("schedule");
        detail::check_keys(o, "schedule", {"steps", "beta_start", "beta_end"});
        detail::read(o, "steps", c.schedule.steps);
        detail::read(o, "beta_start", c.schedule.beta_start);
        detail::read(o, "beta_end", c.schedule.beta_end);
    }
    if (j.contains("model")) {
        const auto& o = j.at("model");
        detail::check_keys(o, "model", {"embed_dim", "trunk_width", "attn_dim", "time_dim", "lora_rank", "input_scale"});
        detail::read(o, "embed_dim", c.model.embed_dim);
        detail::read(o, "trunk_width", c.model.trunk_width);
        detail::read(o, "attn_dim", c.model.attn_dim);
        detail::read(o, "time_dim", c.model.time_dim);
        detail::read(o, "lora_rank", c.model.lora_rank);
        detail::read(o, "input_scale", c.model.input_scale);
    }
    c.model.data_dim = c.world.data_dim;
    if (j.contains("train")) {
        const auto& o = j.at("train");
        detail::check_keys(o, "train", {"dataset_size", "generic_prompt_frac", "generic_target_bias", "epochs",
                                        "batch_size", "lr", "lr_decay_epoch", "lr_decay_factor", "clip_norm"});
        detail::read(o, "dataset_size", c.train.dataset_size);
        detail::read(o, "generic_prompt_frac", c.train.generic_prompt_frac);
        detail::read(o, "generic_target_bias", c.train.generic_target_bias);
        detail::read(o, "epochs", c.train.epochs);
        detail::read(o, "batch_size", c.train.batch_size);
        detail::read(o, "lr", c.train.lr);
        detail::read(o, "lr_decay_epoch", c.train.lr_decay_epoch);
        detail::read(o, "lr_decay_factor", c.train.lr_decay_factor);
        detail::read(o, "clip_norm", c.train.clip_norm);
    }
    if (j.contains("miner")) {
        const auto& o = j.at("miner");
        detail::check_keys(o, "miner", {"pool_size", "pool_budget_factor", "k", "embedding_length", "steps", "lr",
                                        "lr_decay_step", "lr_decay_factor", "clip_norm", "draws_per_image"});
        detail::read(o, "pool_size", c.pool.pool_size);
        detail::read(o, "pool_budget_factor", c.pool.pool_budget_factor);
        detail::read(o, "k", c.miner.k);
        detail::read(o, "embedding_length", c.miner.embedding_length);
        detail::read(o, "steps", c.miner.steps);
        detail::read(o, "lr", c.miner.lr);
        detail::read(o, "lr_decay_step", c.miner.lr_decay_step);
        detail::read(o, "lr_decay_factor", c.miner.lr_decay_factor);
        detail::read(o, "clip_norm", c.miner.clip_norm);
        detail::read(o, "draws_per_image", c.miner.draws_per_image);
    }
    if (j.contains("verifier")) {
        const auto& o = j.at("verifier");
        detail::check_keys(o, "verifier", {"tau", "draws_per_side", "tool"});
        detail::read(o, "tau", c.verifier.tau);
        detail::read(o, "draws_per_side", c.verifier.draws_per_side);
        detail::read(o, "tool", c.verifier.tool);
    }
    if (j.contains("circumvent")) {
        const auto& o = j.at("circumvent");
        detail::check_keys(o, "circumvent",
                           {"alpha_c", "alpha_p", "r", "epochs", "batch_size", "lr", "lr_decay_epoch",
                            "lr_decay_factor", "clip_norm", "max_loops", "x_batch_size", "validation_triples",
                            "concept_score_draws", "preserve_anchor", "preserve_zero", "preserve_neg",
                            "anchor_tokens"});
        detail::read(o, "alpha_c", c.circumvent.alpha_c);
        detail::read(o, "alpha_p", c.circumvent.alpha_p);
        detail::read(o, "r", c.circumvent.r);
        detail::read(o, "epochs", c.circumvent.epochs);
        detail::read(o, "batch_size", c.circumvent.batch_size);
        detail::read(o, "lr", c.circumvent.lr);
        detail::read(o, "lr_decay_epoch", c.circumvent.lr_decay_epoch);
        detail::read(o, "lr_decay_factor", c.circumvent.lr_decay_factor);
        detail::read(o, "clip_norm", c.circumvent.clip_norm);
        detail::read(o, "max_loops", c.circumvent.max_loops);
        detail::read(o, "x_batch_size", c.circumvent.x_batch_size);
        detail::read(o, "validation_triples", c.circumvent.validation_triples);
        detail::read(o, "concept_score_draws", c.circumvent.concept_score_draws);
        detail::read(o, "preserve_anchor", c.circumvent.preserve_anchor);
        detail::read(o, "preserve_zero", c.circumvent.preserve_zero);
        detail::read(o, "preserve_neg", c.circumvent.preserve_neg);
        detail::read(o, "anchor_tokens", c.circumvent.anchor_tokens);
    }
    if (j.contains("baseline")) {
        const auto& o = j.at("baseline");
        detail::check_keys(o, "baseline", {"epochs", "prompt_tokens"});
        detail::read(o, "epochs", c.baseline.epochs);
        detail::read(o, "prompt_tokens", c.baseline.prompt_tokens);
    }
    if (j.contains("attacks")) {
        const auto& o = j.at("attacks");
        detail::check_keys(o, "attacks", {"conditions", "gens_per_condition", "steps", "lr", "lr_decay_step",
                                          "lr_decay_factor", "clip_norm", "k", "images", "embedding_length", "ga"});
        detail::read(o, "conditions", c.attacks.conditions);
        detail::read(o, "gens_per_condition", c.attacks.gens_per_condition);
        detail::read(o, "steps", c.attacks.steps);
        detail::read(o, "lr", c.attacks.lr);
        detail::read(o, "lr_decay_step", c.attacks.lr_decay_step);
        detail::read(o, "lr_decay_factor", c.attacks.lr_decay_factor);
        detail::read(o, "clip_norm", c.attacks.clip_norm);
        detail::read(o, "k", c.attacks.k);
        detail::read(o, "images", c.attacks.images);
        detail::read(o, "embedding_length", c.attacks.embedding_length);
        if (o.contains("ga")) {
            const auto& g = o.at("ga");
            detail::check_keys(g, "attacks.ga", {"population", "generations", "mutation_rate", "sequence_length"});
            detail::read(g, "population", c.attacks.ga.population);
            detail::read(g, "generations", c.attacks.ga.generations);
            detail::read(g, "mutation_rate", c.attacks.ga.mutation_rate);
            detail::read(g, "sequence_length", c.attacks.ga.sequence_length);
        }
    }
    c.attacks.ga.conditions = c.attacks.conditions;
    c.attacks.ga.gens_per_condition = c.attacks.gens_per_condition;
    if (j.contains("metrics")) {
        const auto& o = j.at("metrics");
        detail::check_keys(o, "metrics", {"target_prompts", "neutral_prompts", "gens_per_prompt", "frechet_samples",
                                          "competence_gens", "auc_per_class", "gamma_grid", "gamma_gens"});
        detail::read(o, "target_prompts", c.metrics.target_prompts);
        detail::read(o, "neutral_prompts", c.metrics.neutral_prompts);
        detail::read(o, "gens_per_prompt", c.metrics.gens_per_prompt);
        detail::read(o, "frechet_samples", c.metrics.frechet_samples);
        detail::read(o, "competence_gens", c.metrics.competence_gens);
        detail::read(o, "auc_per_class", c.metrics.auc_per_class);
        detail::read(o, "gamma_grid", c.metrics.gamma_grid);
        detail::read(o, "gamma_gens", c.metrics.gamma_gens);
    }
    c.validate();
    return c;
}

inline Json ExperimentConfig::to_json() const {
    Json j;
    j["seed"] = seed;
    j["concept"] = concept_name;
    j["world"] = {{"data_dim", world.data_dim},
                  {"component_count", world.component_count},
                  {"radius", world.radius},
                  {"target_components", world.target_components}};
    j["schedule"] = {{"steps", schedule.steps}, {"beta_start", schedule.beta_start}, {"beta_end", schedule.beta_end}};
    j["model"] = {{"embed_dim", model.embed_dim},
                  {"trunk_width", model.trunk_width},
                  {"attn_dim", model.attn_dim},
                  {"time_dim", model.time_dim},
                  {"lora_rank", model.lora_rank},
                  {"input_scale", model.input_scale}};
    j["train"] = {{"dataset_size", train.dataset_size},
                  {"generic_prompt_frac", train.generic_prompt_frac},
                  {"generic_target_bias", train.generic_target_bias},
                  {"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"lr", train.lr},
                  {"lr_decay_epoch", train.lr_decay_epoch},
                  {"lr_decay_factor", train.lr_decay_factor},
                  {"clip_norm", train.clip_norm}};
    j["miner"] = {{"pool_size", pool.pool_size},
                  {"pool_budget_factor", pool.pool_budget_factor},
                  {"k", miner.k},
                  {"embedding_length", miner.embedding_length},
                  {"steps", miner.steps},
                  {"lr", miner.lr},
                  {"lr_decay_step", miner.lr_decay_step},
                  {"lr_decay_factor", miner.lr_decay_factor},
                  {"clip_norm", miner.clip_norm},
                  {"draws_per_image", miner.draws_per_image}};
    j["verifier"] = {{"tau", verifier.tau}, {"draws_per_side", verifier.draws_per_side}, {"tool", verifier.tool}};
    j["circumvent"] = {{"alpha_c", circumvent.alpha_c},
                       {"alpha_p", circumvent.alpha_p},
                       {"r", circumvent.r},
                       {"epochs", circumvent.epochs},
                       {"batch_size", circumvent.batch_size},
                       {"lr", circumvent.lr},
                       {"lr_decay_epoch", circumvent.lr_decay_epoch},
                       {"lr_decay_factor", circumvent.lr_decay_factor},
                       {"clip_norm", circumvent.clip_norm},
                       {"max_loops", circumvent.max_loops},
                       {"x_batch_size", circumvent.x_batch_size},
                       {"validation_triples", circumvent.validation_triples},
                       {"concept_score_draws", circumvent.concept_score_draws},
                       {"preserve_anchor", circumvent.preserve_anchor},
                       {"preserve_zero", circumvent.preserve_zero},
                       {"preserve_neg", circumvent.preserve_neg},
                       {"anchor_tokens", circumvent.anchor_tokens}};
    j["baseline"] = {{"epochs", baseline.epochs}, {"prompt_tokens", baseline.prompt_tokens}};
    j["attacks"] = {{"conditions", attacks.conditions},
                    {"gens_per_condition", attacks.gens_per_condition},
                    {"steps", attacks.steps},
                    {"lr", attacks.lr},
                    {"lr_decay_step", attacks.lr_decay_step},
                    {"lr_decay_factor", attacks.lr_decay_factor},
                    {"clip_norm", attacks.clip_norm},
                    {"k", attacks.k},
                    {"images", attacks.images},
                    {"embedding_length", attacks.embedding_length},
                    {"ga",
                     {{"population", attacks.ga.population},
                      {"generations", attacks.ga.generations},
                      {"mutation_rate", attacks.ga.mutation_rate},
                      {"sequence_length", attacks.ga.sequence_length}}}};
    j["metrics"] = {{"target_prompts", metrics.target_prompts},
                    {"neutral_prompts", metrics.neutral_prompts},
                    {"gens_per_prompt", metrics.gens_per_prompt},
                    {"frechet_samples", metrics.frechet_samples},
                    {"competence_gens", metrics.competence_gens},
                    {"auc_per_class", metrics.auc_per_class},
                    {"gamma_grid", metrics.gamma_grid},
                    {"gamma_gens", metrics.gamma_gens}};
    return j;
}

inline uint64_t ExperimentConfig::hash() const {
    // nlohmann objects iterate in sorted key order, so dump() is canonical
    const std::string s = to_json().dump();
    return fnv1a64(s);
}

inline std::string ExperimentConfig::hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
    return std::string(buf);
}

inline void ExperimentConfig::validate() const {
    if (world.data_dim <= 0 || world.component_count <= 0) throw ConfigError("config: bad world dimensions");
    if (world.target_components.empty()) throw ConfigError("config: no target components");
    for (int t : world.target_components) {
        if (t < 0 || t >= world.component_count) throw ConfigError("config: target component out of range");
    }
    if (static_cast<int>(world.target_components.size()) >= world.component_count) {
        throw ConfigError("config: no neutral component");
    }
    if (schedule.steps <= 0) throw ConfigError("config: schedule steps must be positive");
    if (!(schedule.beta_start > 0.0) || !(schedule.beta_end < 1.0) || schedule.beta_start > schedule.beta_end) {
        throw ConfigError("config: bad beta range");
    }
    if (model.embed_dim <= 0 || model.trunk_width <= 0 || model.attn_dim <= 0 || model.time_dim <= 0 ||
        model.lora_rank <= 0) {
        throw ConfigError("config: bad model dimensions");
    }
    if (miner.k <= 0 || miner.k > pool.pool_size) throw ConfigError("config: miner k must be in [1, pool_size]");
    if (miner.embedding_length < 1) throw ConfigError("config: embedding_length must be >= 1");
    if (verifier.tool != "delta" && verifier.tool != "oracle") throw ConfigError("config: verifier tool must be delta or oracle");
    circumvent_config().validate();
    if (metrics.gamma_grid.empty()) throw ConfigError("config: empty gamma grid");
}

inline ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    Json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config: parse error in " + path + ": " + e.what());
    }
    return from_json(j);
}

}  // namespace minediff
