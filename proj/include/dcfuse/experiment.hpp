#pragma once

#include "dcfuse/borda.hpp"
#include "dcfuse/datasynth.hpp"
#include "dcfuse/focusdet.hpp"
#include "dcfuse/fusenet.hpp"
#include "dcfuse/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dcfuse {

// Everything needed to reproduce a run, in one JSON document.
struct ExperimentConfig {
    struct Dataset {
        std::string manifest;      // training manifest
        std::string eval_manifest; // held-out samples for evaluate/ablate
        SynthConfig synth;
    } dataset;
    struct Detector {
        FocusDetectorConfig arch;
        TrainConfig train;
    } detector;
    struct Fusion {
        FusionNetConfig arch;
        TrainConfig train;
        std::string vgg19_weights; // empty: detector-encoder fallback
    } fusion;
    struct Eval {
        std::vector<std::string> metrics{"q_e", "q_cv", "q_p", "sd"};
    } eval;
};

nlohmann::ordered_json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

nlohmann::ordered_json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

// A training config file is either a bare TrainConfig object or a full
// experiment config, in which case `section` ("detector"/"fusion") is used.
TrainConfig load_train_section(const std::filesystem::path& path, const std::string& section);

// ---- metrics --------------------------------------------------------------

struct MetricInfo {
    std::string name;
    metrics::Direction direction;
    bool needs_gt;
};

const std::vector<MetricInfo>& metric_catalog();
const MetricInfo& metric_info(const std::string& name); // Error("metric") if unknown
std::vector<std::string> default_metrics(bool with_gt);

struct ImageTriple {
    std::string name;
    GrayImage s1, s2;
    std::optional<GrayImage> gt;
};

double compute_metric(const std::string& name, const GrayImage& fused, const ImageTriple& t);

// Scores of one method: values[metric][image].
struct MethodScores {
    std::string method;
    std::vector<std::vector<double>> values;
};

struct Evaluation {
    std::vector<std::string> metrics;
    std::vector<std::string> images;
    std::vector<MethodScores> methods;
};

// `fused[i]` belongs to `set[i]`. Images are scored in parallel; the result
// does not depend on the worker count.
MethodScores score_method(const std::string& method, const std::vector<GrayImage>& fused,
                          const std::vector<ImageTriple>& set, const std::vector<std::string>& metrics);

double mean_of(const std::vector<double>& v);
double sd_of(const std::vector<double>& v); // population

// Borda over method means; needs at least two methods.
metrics::MetricReport rank_methods(const Evaluation& ev);

// Deterministic report body (no metadata block).
nlohmann::ordered_json evaluation_report(const Evaluation& ev, const std::string& title);

// Text table: one row per method, "mean±sd (rank)" per metric, Borda total
// last. Works for evaluation and ablation reports.
std::string render_report(const nlohmann::json& report);

// ---- ablation ---------------------------------------------------------------

struct AblationVariant {
    std::string name;
    fusion::FusionRule rule;
    bool use_dfpp;
};

// dc-eemf, no-dfpp, then the remaining four fusion rules (all with dFPP).
const std::vector<AblationVariant>& ablation_variants();

// Runs every model over the set, builds the two-row dFPP table and the
// five-row fusion-rule table, and records whether each expected trend holds.
// A trend that does not hold is listed under "flags" instead of raising.
nlohmann::ordered_json ablation_report(std::map<std::string, FusionNet>& models,
                                       const std::vector<ImageTriple>& set,
                                       const std::vector<std::string>& metrics,
                                       std::map<std::string, std::vector<GrayImage>>* fused_out = nullptr);

// ---- misc -------------------------------------------------------------------

std::vector<ImageTriple> triples_from_samples(const std::vector<MultiFocusSample>& samples,
                                              const std::vector<std::string>& names);

// Variable facts about a run, kept apart from the reproducible body.
nlohmann::ordered_json run_metadata(const std::string& command);

// JSON text with a trailing newline; the same document always gives the same bytes.
void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& doc);
void write_text(const std::filesystem::path& path, const std::string& text);

} // namespace dcfuse
