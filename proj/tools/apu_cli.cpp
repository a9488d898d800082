// Command-line driver for the pair-fitting pipeline. Subcommands mirror the
// dataset stages (propose, ask, denoise, fit, filter) plus prior training,
// guided fitting, synthetic-scene generation, evaluation, and gradient
// verification.
//
// Exit codes: 0 success; 1 configuration, asset, or input error; 2 batch
// completed but some records failed (their error fields carry the reason).

#include <CLI11.hpp>

#include <apu/apu.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

struct GlobalOptions {
    std::string config_path;
    std::string assets_path = "assets/default_body.json";
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
};

apu::PipelineConfig load_config(const GlobalOptions& g) {
    apu::PipelineConfig config =
        g.config_path.empty() ? apu::PipelineConfig{} : apu::load_pipeline_config(g.config_path);
    if (g.seed) config.seed = *g.seed;
    if (g.workers) config.workers = *g.workers;
    config.validate();
    return config;
}

apu::BodyModelAsset load_model(const GlobalOptions& g) {
    return apu::load_body_asset(g.assets_path);
}

int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

int run_batch(const std::string& stage, const std::string& in, const std::string& out,
              const apu::PipelineConfig& config, const apu::StageContext& ctx) {
    std::vector<apu::PairRecord> records = apu::read_records(in);
    const apu::StageOutcome outcome = apu::run_stage(stage, std::move(records), config, ctx);
    apu::write_records(outcome.records, out);
    std::fprintf(stderr, "%s: %d processed, %d failed, %d filtered; wrote %zu records to %s\n",
                 stage.c_str(), outcome.summary.processed, outcome.summary.failed,
                 outcome.summary.filtered, outcome.records.size(), out.c_str());
    return outcome.summary.failed > 0 ? 2 : 0;
}

std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

int cmd_propose(const GlobalOptions& g, const std::string& detections,
                const std::string& out) {
    const apu::PipelineConfig config = load_config(g);
    const apu::BodyModelAsset model = load_model(g);
    apu::ProposeConfig propose = config.propose;
    propose.asset = &model;
    propose.camera = &config.camera;

    std::ifstream in(detections);
    if (!in) throw apu::Error("cannot open detections file " + detections);
    std::vector<apu::PairRecord> records;
    std::string line;
    int line_no = 0, images = 0;
    while (std::getline(in, line)) {
        ++line_no;
        try {
            const auto [image, people] =
                apu::detections_from_json(nlohmann::json::parse(line));
            const auto pairs = apu::propose_candidates(people, propose, image);
            const auto batch = apu::records_from_candidates(pairs, people, "detector");
            records.insert(records.end(), batch.begin(), batch.end());
            ++images;
        } catch (const std::exception& e) {
            throw apu::ParseError(detections + " line " + std::to_string(line_no) + ": " +
                                  e.what());
        }
    }
    apu::canonical_sort(records);
    apu::write_records(records, out);
    std::fprintf(stderr, "propose: %d images, %zu candidate pairs -> %s\n", images,
                 records.size(), out.c_str());
    return 0;
}

int cmd_ask(const GlobalOptions& g, const std::string& records, const std::string& out,
            const std::string& images, const std::string& provider_override,
            const std::string& mock_dir_override, const std::string& endpoint_override) {
    apu::PipelineConfig config = load_config(g);
    if (!provider_override.empty()) config.ask.provider = provider_override;
    if (!mock_dir_override.empty()) config.ask.mock_dir = mock_dir_override;
    if (!endpoint_override.empty()) config.ask.endpoint = endpoint_override;
    config.validate();

    std::unique_ptr<apu::AnnotationProvider> provider;
    if (config.ask.provider == "mock") {
        if (config.ask.mock_dir.empty())
            throw apu::ValidationError("mock provider needs ask.mock_dir (or --mock-dir)");
        provider = std::make_unique<apu::MockProvider>(config.ask.mock_dir);
    } else {
        apu::HttpProviderConfig http;
        http.endpoint = config.ask.endpoint;
        http.max_attempts = config.ask.max_attempts;
        http.backoff_base_ms = config.ask.backoff_base_ms;
        provider = std::make_unique<apu::HttpProvider>(http);
    }
    apu::CachingClient client(*provider, config.ask.cache_dir, config.ask.max_in_flight,
                              config.ask.min_interval_ms);
    apu::StageContext ctx;
    ctx.client = &client;
    ctx.image_dir = images;
    return run_batch("ask", records, out, config, ctx);
}

int cmd_denoise(const GlobalOptions& g, const std::string& records, const std::string& out) {
    const apu::PipelineConfig config = load_config(g);
    const apu::BodyModelAsset model = load_model(g);
    apu::StageContext ctx;
    ctx.model = &model;
    return run_batch("denoise", records, out, config, ctx);
}

int cmd_fit(const GlobalOptions& g, const std::string& records, const std::string& out,
            const std::string& trace_dir) {
    const apu::PipelineConfig config = load_config(g);
    const apu::BodyModelAsset model = load_model(g);
    apu::StageContext ctx;
    ctx.model = &model;
    ctx.trace_dir = trace_dir;
    apu::GmmPrior gmm;
    if (config.pose_prior.enabled) {
        gmm = apu::fit_gmm(
            apu::make_pose_library(config.pose_prior.library_size,
                                   static_cast<unsigned>(config.seed)),
            config.pose_prior.components, static_cast<unsigned>(config.seed));
        ctx.gmm = &gmm;
    }
    return run_batch("fit", records, out, config, ctx);
}

int cmd_fit_with_prior(const GlobalOptions& g, const std::string& records,
                       const std::string& out, const std::string& prior_path,
                       const std::string& trace_dir) {
    const apu::PipelineConfig config = load_config(g);
    const apu::BodyModelAsset model = load_model(g);
    const apu::Denoiser denoiser = apu::load_denoiser(prior_path);
    denoiser.validate();
    apu::StageContext ctx;
    ctx.model = &model;
    ctx.denoiser = &denoiser;
    ctx.trace_dir = trace_dir;
    return run_batch("fit-with-prior", records, out, config, ctx);
}

int cmd_filter(const GlobalOptions& g, const std::string& records, const std::string& out,
               std::optional<double> threshold) {
    apu::PipelineConfig config = load_config(g);
    if (threshold) config.filter_threshold = *threshold;
    config.validate();
    return run_batch("filter", records, out, config, {});
}

int cmd_prior_train(const GlobalOptions& g, const std::string& records,
                    const std::string& out) {
    const apu::PipelineConfig config = load_config(g);
    const apu::BodyModelAsset model = load_model(g);

    std::vector<apu::PriorExample> dataset;
    for (const auto& rec : apu::read_records(records)) {
        if (!rec.params_a) continue;
        dataset.push_back({*rec.params_a, *rec.params_b, rec.provenance.source});
    }
    std::fprintf(stderr, "prior-train: %zu examples from %s\n", dataset.size(),
                 records.c_str());
    const apu::Denoiser denoiser =
        apu::train_prior(dataset, config.schedule.build(), config.prior_train, model);
    apu::save_denoiser(denoiser, out);
    if (denoiser.loss_curve.size() >= 2)
        std::fprintf(stderr, "prior-train: loss %.6f -> %.6f over %zu steps; saved %s\n",
                     denoiser.loss_curve.front(), denoiser.loss_curve.back(),
                     denoiser.loss_curve.size(), out.c_str());
    return 0;
}

int cmd_synth(const GlobalOptions& g, const std::string& templates_csv, int count,
              const std::string& out) {
    const apu::PipelineConfig config = load_config(g);
    const apu::BodyModelAsset model = load_model(g);
    const std::vector<std::string> templates = split_csv(templates_csv);
    if (templates.empty()) throw apu::ValidationError("--templates must name at least one template");
    if (count < 1) throw apu::ValidationError("--count must be positive");

    std::vector<apu::PairRecord> records;
    for (int i = 0; i < count; ++i) {
        const std::string& tmpl = templates[i % templates.size()];
        const unsigned seed = static_cast<unsigned>(config.seed + i);
        const apu::GtScene scene =
            apu::generate_scene(tmpl, model, seed, config.synth.tau, config.propose.k_min);
        const apu::Observations obs = apu::corrupt(
            scene, config.synth.corruption, seed + apu::kSynthObservationSeedOffset, model);
        records.push_back(apu::make_synth_record(scene, obs));
    }
    apu::canonical_sort(records);
    apu::write_records(records, out);
    std::fprintf(stderr, "synth: %d scenes -> %s\n", count, out.c_str());
    return 0;
}

int cmd_eval(const GlobalOptions& g, const std::string& records, const std::string& out) {
    const apu::PipelineConfig config = load_config(g);
    const apu::BodyModelAsset model = load_model(g);

    std::vector<apu::SceneResult> results;
    int skipped = 0;
    for (const auto& rec : apu::read_records(records)) {
        const auto rebuilt = rec.params_a
                                 ? apu::reconstruct_synth_scene(rec, config, model)
                                 : std::nullopt;
        if (!rebuilt) {
            ++skipped;  // unfitted or not a synthetic record: no ground truth
            continue;
        }
        results.push_back({rebuilt->first, rebuilt->second.init, *rec.params_a, *rec.params_b});
    }
    if (skipped > 0)
        std::fprintf(stderr, "eval: skipped %d records without synthetic ground truth\n",
                     skipped);
    const apu::EvalReport report = apu::evaluate_fits(results, model);
    const std::string csv = apu::eval_report_csv(report);
    if (out.empty()) {
        std::fputs(csv.c_str(), stdout);
    } else {
        std::ofstream file(out);
        if (!file) throw apu::Error("cannot open report file " + out);
        file << csv;
        std::fprintf(stderr, "eval: %zu scenes -> %s\n", results.size(), out.c_str());
    }
    return 0;
}

int cmd_gradcheck(const GlobalOptions& g, int configs, double step, double tol,
                  int directions) {
    const apu::PipelineConfig config = load_config(g);
    const apu::BodyModelAsset model = load_model(g);
    const auto rows =
        apu::run_gradient_checks(model, configs, step, config.seed, directions);
    bool all_ok = true;
    for (const auto& row : rows) {
        const bool ok = row.max_rel_err <= tol;
        all_ok = all_ok && ok;
        std::printf("%-20s configs %3d   max relative error %.3e   %s\n", row.name.c_str(),
                    row.configs, row.max_rel_err, ok ? "pass" : "FAIL");
    }
    return all_ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-person contact annotation and mesh-fitting pipeline"};
    app.require_subcommand(1);

    GlobalOptions g;
    app.add_option("--config", g.config_path, "pipeline configuration file (JSON)");
    app.add_option("--assets", g.assets_path, "body model asset file")
        ->capture_default_str();
    std::uint64_t seed_value = 0;
    int workers_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "override the configured global seed");
    auto* workers_opt =
        app.add_option("--workers", workers_value, "override the configured worker count");

    std::string detections, records, out, images = ".";
    std::string provider_override, mock_dir_override, endpoint_override;
    std::string prior_path, trace_dir;
    std::string templates = "handshake,hug,high-five,pat-on-back,random-contact";
    int count = 10;
    double threshold_value = 0.0;
    int gc_configs = 20, gc_directions = 3;
    double gc_step = apu::kGradCheckStep, gc_tol = apu::kGradCheckTol;

    auto* propose = app.add_subcommand("propose", "pair up detected people per image");
    propose->add_option("--detections", detections, "per-image detection JSONL")->required();
    propose->add_option("--out", out, "output records JSONL")->required();

    auto* ask = app.add_subcommand("ask", "annotate record images via the LVLM provider");
    ask->add_option("--records", records, "input records JSONL")->required();
    ask->add_option("--out", out, "output records JSONL")->required();
    ask->add_option("--images", images, "directory holding record images")
        ->capture_default_str();
    ask->add_option("--provider", provider_override, "provider override: mock or http");
    ask->add_option("--mock-dir", mock_dir_override, "mock provider response directory");
    ask->add_option("--endpoint", endpoint_override, "http provider endpoint URL");

    auto* denoise = app.add_subcommand("denoise", "chirality-correct raw annotations");
    denoise->add_option("--records", records, "input records JSONL")->required();
    denoise->add_option("--out", out, "output records JSONL")->required();

    auto* fit = app.add_subcommand("fit", "fit body pairs to keypoints and contacts");
    fit->add_option("--records", records, "input records JSONL")->required();
    fit->add_option("--out", out, "output records JSONL")->required();
    fit->add_option("--trace", trace_dir, "directory for per-record loss trace CSVs");

    auto* fwp = app.add_subcommand("fit-with-prior",
                                   "fit body pairs guided by a trained generative prior");
    fwp->add_option("--records", records, "input records JSONL")->required();
    fwp->add_option("--out", out, "output records JSONL")->required();
    fwp->add_option("--prior", prior_path, "denoiser checkpoint file")->required();
    fwp->add_option("--trace", trace_dir, "directory for per-record loss trace CSVs");

    auto* filter = app.add_subcommand("filter", "drop pairs with high reprojection error");
    filter->add_option("--records", records, "input records JSONL")->required();
    filter->add_option("--out", out, "output records JSONL")->required();
    auto* threshold_opt =
        filter->add_option("--threshold", threshold_value, "reprojection error threshold (px)");

    auto* ptrain = app.add_subcommand("prior-train",
                                      "train the generative pair prior on fitted records");
    ptrain->add_option("--records", records, "fitted records JSONL")->required();
    ptrain->add_option("--out", out, "output checkpoint file")->required();

    auto* synth = app.add_subcommand("synth", "generate synthetic annotated scenes");
    synth->add_option("--templates", templates, "comma-separated template names")
        ->capture_default_str();
    synth->add_option("--count", count, "number of scenes")->capture_default_str();
    synth->add_option("--out", out, "output records JSONL")->required();

    auto* eval = app.add_subcommand("eval", "score fitted synthetic records against truth");
    eval->add_option("--records", records, "fitted records JSONL")->required();
    eval->add_option("--out", out, "report CSV path (stdout when omitted)");

    auto* gradcheck = app.add_subcommand("gradcheck",
                                         "verify analytic gradients against finite differences");
    gradcheck->add_option("--configs", gc_configs, "configurations per term")
        ->capture_default_str();
    gradcheck->add_option("--step", gc_step, "finite-difference step")->capture_default_str();
    gradcheck->add_option("--tol", gc_tol, "max allowed relative error")
        ->capture_default_str();
    gradcheck->add_option("--directions", gc_directions, "directions per configuration")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    if (seed_opt->count() > 0) g.seed = seed_value;
    if (workers_opt->count() > 0) g.workers = workers_value;
    std::optional<double> threshold;
    if (threshold_opt->count() > 0) threshold = threshold_value;

    if (app.got_subcommand(propose))
        return guarded([&] { return cmd_propose(g, detections, out); });
    if (app.got_subcommand(ask))
        return guarded([&] {
            return cmd_ask(g, records, out, images, provider_override, mock_dir_override,
                           endpoint_override);
        });
    if (app.got_subcommand(denoise))
        return guarded([&] { return cmd_denoise(g, records, out); });
    if (app.got_subcommand(fit))
        return guarded([&] { return cmd_fit(g, records, out, trace_dir); });
    if (app.got_subcommand(fwp))
        return guarded(
            [&] { return cmd_fit_with_prior(g, records, out, prior_path, trace_dir); });
    if (app.got_subcommand(filter))
        return guarded([&] { return cmd_filter(g, records, out, threshold); });
    if (app.got_subcommand(ptrain))
        return guarded([&] { return cmd_prior_train(g, records, out); });
    if (app.got_subcommand(synth))
        return guarded([&] { return cmd_synth(g, templates, count, out); });
    if (app.got_subcommand(eval))
        return guarded([&] { return cmd_eval(g, records, out); });
    if (app.got_subcommand(gradcheck))
        return guarded(
            [&] { return cmd_gradcheck(g, gc_configs, gc_step, gc_tol, gc_directions); });
    return 1;
}
