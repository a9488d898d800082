#include <apu/pipeline.hpp>
#include <apu/provider.hpp>
#include <apu/rng.hpp>
#include <apu/synth.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace apu;
using Catch::Matchers::ContainsSubstring;

namespace {

namespace fs = std::filesystem;

const BodyModelAsset& asset() {
    static BodyModelAsset a = load_body_asset(std::string(APU_ASSET_DIR) + "/default_body.json");
    return a;
}

// Fresh per-test scratch directory under the build tree.
fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("apu_pipeline_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void spit(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(out);
    out << text;
}

BodyParams random_params(Rng& rng) {
    BodyParams p;
    for (auto& t : p.theta) t = {rng.uniform_in(-0.4, 0.4), rng.uniform_in(-0.4, 0.4),
                                 rng.uniform_in(-0.4, 0.4)};
    for (auto& b : p.beta) b = rng.uniform_in(-1.0, 1.0);
    p.sigma = rng.uniform();
    p.gamma = {rng.uniform_in(-1.0, 1.0), rng.uniform_in(-0.5, 0.5), rng.uniform_in(2.0, 4.0)};
    p.phi = {rng.uniform_in(-0.5, 0.5), rng.uniform_in(-3.0, 3.0), rng.uniform_in(-0.5, 0.5)};
    return p;
}

Keypoints2D random_keypoints(Rng& rng, int n) {
    static const Laterality sides[] = {Laterality::left, Laterality::right, Laterality::center};
    Keypoints2D kps;
    for (int i = 0; i < n; ++i)
        kps.points.push_back({rng.uniform_in(0.0, 512.0), rng.uniform_in(0.0, 512.0),
                              rng.uniform(), sides[i % 3]});
    return kps;
}

InteractionAnnotation random_annotation(Rng& rng) {
    InteractionAnnotation ann;
    ann.interaction = rng.bernoulli(0.5) ? "hug" : "handshake";
    ann.person_left = "person in red";
    ann.person_right = "person in blue";
    ann.orientation = "facing each other";
    const int n = rng.uniform_int(1, 3);
    for (int i = 0; i < n; ++i)
        ann.contacts.push_back({make_body_part("hand", Side::right),
                                make_body_part(i % 2 ? "chest" : "shoulder", Side::left),
                                rng.uniform()});
    return ann;
}

// A structurally valid record whose optional fields follow its stage.
PairRecord random_record(Rng& rng, Stage stage, int index) {
    PairRecord rec;
    rec.image_name = "img-" + std::to_string(index) + ".png";
    rec.person_a = rng.uniform_int(0, 3);
    rec.person_b = rec.person_a + rng.uniform_int(1, 3);
    rec.bbox = {rng.uniform_in(0.0, 100.0), rng.uniform_in(0.0, 100.0),
                rng.uniform_in(10.0, 300.0), rng.uniform_in(10.0, 300.0)};
    rec.interaction = rng.bernoulli(0.5) ? "hug" : "";
    rec.kps_a = random_keypoints(rng, rng.uniform_int(3, 17));
    rec.kps_b = random_keypoints(rng, rng.uniform_int(3, 17));
    rec.stage = stage;
    rec.provenance.source = rng.bernoulli(0.5) ? "synth:hug:7" : "detector";
    rec.provenance.seed = rng.uniform_int(0, 1 << 30);
    rec.provenance.config_digest = "0123456789abcdef";
    if (stage_at_least(stage, Stage::asked)) rec.lvlm_output = random_annotation(rng);
    if (stage_at_least(stage, Stage::denoised)) {
        const int n = rng.uniform_int(0, 2);
        for (int i = 0; i < n; ++i)
            rec.denoised_contacts.push_back({make_body_part("hand", Side::left),
                                             make_body_part("back", Side::none), rng.uniform(),
                                             rng.uniform(), rng.bernoulli(0.5)});
    }
    if (stage_at_least(stage, Stage::fitted)) {
        rec.params_a = random_params(rng);
        rec.params_b = random_params(rng);
        rec.filter_error_a = rng.uniform_in(0.0, 30.0);
        rec.filter_error_b = rng.uniform_in(0.0, 30.0);
    }
    if (rng.bernoulli(0.3)) rec.error = "previous stage complaint";
    return rec;
}

// Asked-stage synthetic record whose observations match what the fit stage
// will rebuild from the source tag.
PairRecord synth_record(const std::string& tmpl, unsigned seed, const PipelineConfig& config) {
    const GtScene scene = generate_scene(tmpl, asset(), seed, config.synth.tau);
    const Observations obs =
        corrupt(scene, config.synth.corruption, seed + kSynthObservationSeedOffset, asset());
    return make_synth_record(scene, obs);
}

PipelineConfig fast_fit_config() {
    PipelineConfig config;
    config.optimizer.stage1_steps = 25;
    config.optimizer.stage2_steps = 15;
    return config;
}

}  // namespace

TEST_CASE("stage names round-trip and reject unknowns") {
    for (Stage s : {Stage::proposed, Stage::asked, Stage::denoised, Stage::fitted,
                    Stage::filtered})
        REQUIRE(stage_from_string(to_string(s)) == s);
    REQUIRE_THROWS_AS(stage_from_string("cooked"), ParseError);
    REQUIRE(stage_at_least(Stage::fitted, Stage::denoised));
    REQUIRE(!stage_at_least(Stage::asked, Stage::denoised));
}

TEST_CASE("records survive a JSONL round trip") {
    const fs::path dir = scratch_dir("roundtrip");
    Rng rng(404);
    static const Stage stages[] = {Stage::proposed, Stage::asked, Stage::denoised, Stage::fitted,
                                   Stage::filtered};
    std::vector<PairRecord> records;
    for (int i = 0; i < 10; ++i) records.push_back(random_record(rng, stages[i % 5], i));

    const fs::path first = dir / "records.jsonl";
    write_records(records, first);
    const std::vector<PairRecord> loaded = read_records(first);
    REQUIRE(loaded.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) REQUIRE(loaded[i] == records[i]);

    const fs::path second = dir / "copy.jsonl";
    write_records(loaded, second);
    REQUIRE(slurp(second) == slurp(first));  // byte-for-byte stable
}

TEST_CASE("read_records names the offending line") {
    const fs::path dir = scratch_dir("badlines");
    Rng rng(11);
    const std::string good = record_to_json(random_record(rng, Stage::asked, 0)).dump();

    SECTION("truncated json") {
        spit(dir / "t.jsonl", good + "\n" + good + "\n{\"image_name\": \"x\",\n");
        REQUIRE_THROWS_WITH(read_records(dir / "t.jsonl"), ContainsSubstring("line 3"));
        REQUIRE_THROWS_AS(read_records(dir / "t.jsonl"), ParseError);
    }
    SECTION("schema version mismatch") {
        nlohmann::json j = record_to_json(random_record(rng, Stage::proposed, 1));
        j["schema_version"] = 99;
        spit(dir / "v.jsonl", good + "\n" + j.dump() + "\n");
        REQUIRE_THROWS_WITH(read_records(dir / "v.jsonl"),
                            ContainsSubstring("line 2") && ContainsSubstring("schema version"));
        REQUIRE_THROWS_AS(read_records(dir / "v.jsonl"), SchemaError);
    }
    SECTION("fitted record missing params") {
        nlohmann::json j = record_to_json(random_record(rng, Stage::fitted, 2));
        j.erase("params");
        spit(dir / "p.jsonl", j.dump() + "\n");
        REQUIRE_THROWS_WITH(read_records(dir / "p.jsonl"),
                            ContainsSubstring("line 1") && ContainsSubstring("parameters"));
        REQUIRE_THROWS_AS(read_records(dir / "p.jsonl"), ValidationError);
    }
    SECTION("missing file") {
        REQUIRE_THROWS_AS(read_records(dir / "absent.jsonl"), Error);
        REQUIRE_THROWS_AS(write_records({}, dir / "no-such-dir" / "x.jsonl"), Error);
    }
}

TEST_CASE("record validation enforces cross-field invariants") {
    Rng rng(5);
    PairRecord rec = random_record(rng, Stage::fitted, 0);
    REQUIRE_NOTHROW(validate_record(rec));

    SECTION("params must come in pairs") {
        rec.params_b.reset();
        REQUIRE_THROWS_WITH(validate_record(rec), ContainsSubstring("both people or neither"));
    }
    SECTION("filter errors must come in pairs") {
        rec.filter_error_a.reset();
        REQUIRE_THROWS_WITH(validate_record(rec), ContainsSubstring("both people or neither"));
    }
    SECTION("early stages may not carry fitted fields") {
        rec.stage = Stage::denoised;
        REQUIRE_THROWS_WITH(validate_record(rec),
                            ContainsSubstring("may not carry fitted parameters"));
    }
    SECTION("fitted stages must carry fitted fields") {
        rec.params_a.reset();
        rec.params_b.reset();
        rec.filter_error_a.reset();
        rec.filter_error_b.reset();
        REQUIRE_THROWS_WITH(validate_record(rec), ContainsSubstring("must carry"));
    }
    SECTION("people must be distinct") {
        rec.person_b = rec.person_a;
        REQUIRE_THROWS_WITH(validate_record(rec), ContainsSubstring("distinct"));
    }
    SECTION("bad sigma is rejected through params validation") {
        rec.params_a->sigma = 1.5;
        REQUIRE_THROWS_AS(validate_record(rec), ValidationError);
    }
}

TEST_CASE("configs round-trip with defaults and reject unknown keys") {
    const PipelineConfig defaults;
    const PipelineConfig parsed = pipeline_config_from_json(nlohmann::json::parse("{}"));
    REQUIRE(pipeline_config_to_json(parsed) == pipeline_config_to_json(defaults));

    PipelineConfig custom;
    custom.seed = 99;
    custom.workers = 3;
    custom.optimizer.stage1_steps = 42;
    custom.synth.corruption.p_flip = 0.25;
    custom.prior_train.source_fractions = {{"synth", 0.75}, {"real", 0.25}};
    const nlohmann::json j = pipeline_config_to_json(custom);
    REQUIRE(pipeline_config_to_json(pipeline_config_from_json(j)) == j);

    SECTION("digest tracks value changes") {
        REQUIRE(pipeline_config_digest(defaults) == pipeline_config_digest(PipelineConfig{}));
        REQUIRE(pipeline_config_digest(defaults) != pipeline_config_digest(custom));
        PipelineConfig nudged;
        nudged.filter_threshold = 20.5;
        REQUIRE(pipeline_config_digest(defaults) != pipeline_config_digest(nudged));
    }
    SECTION("unknown keys are rejected at every level") {
        REQUIRE_THROWS_WITH(pipeline_config_from_json({{"bogus", 1}}),
                            ContainsSubstring("unknown config key 'bogus'"));
        REQUIRE_THROWS_AS(pipeline_config_from_json({{"bogus", 1}}), SchemaError);
        REQUIRE_THROWS_WITH(pipeline_config_from_json({{"optimizer", {{"momentum", 0.9}}}}),
                            ContainsSubstring("unknown config key 'optimizer.momentum'"));
    }
    SECTION("schema version and ranges are enforced") {
        REQUIRE_THROWS_AS(pipeline_config_from_json({{"schema_version", 2}}), SchemaError);
        REQUIRE_THROWS_AS(pipeline_config_from_json({{"workers", 0}}), ValidationError);
        REQUIRE_THROWS_AS(pipeline_config_from_json({{"filter_threshold", -1.0}}),
                          ValidationError);
        REQUIRE_THROWS_AS(pipeline_config_from_json({{"synth", {{"p_flip", 1.5}}}}),
                          ValidationError);
        REQUIRE_THROWS_AS(pipeline_config_from_json({{"ask", {{"provider", "carrier-pigeon"}}}}),
                          ValidationError);
    }
    SECTION("config files load") {
        const fs::path dir = scratch_dir("config");
        spit(dir / "config.json", j.dump());
        const PipelineConfig loaded = load_pipeline_config(dir / "config.json");
        REQUIRE(pipeline_config_to_json(loaded) == j);
        REQUIRE_THROWS_AS(load_pipeline_config(dir / "absent.json"), Error);
        spit(dir / "broken.json", "{nope");
        REQUIRE_THROWS_AS(load_pipeline_config(dir / "broken.json"), ParseError);
    }
}

TEST_CASE("per-record seeds depend on identity, not order") {
    const std::uint64_t s = record_seed(7, "img.png", 0, 1);
    REQUIRE(record_seed(7, "img.png", 0, 1) == s);
    REQUIRE(record_seed(8, "img.png", 0, 1) != s);
    REQUIRE(record_seed(7, "img2.png", 0, 1) != s);
    REQUIRE(record_seed(7, "img.png", 0, 2) != s);
    REQUIRE(record_seed(7, "img.png", 1, 0) != s);
}

TEST_CASE("filter keeps below-threshold pairs only") {
    PipelineConfig config;
    REQUIRE(config.filter_threshold == 20.0);

    Rng rng(2);
    PairRecord keep = random_record(rng, Stage::fitted, 0);
    keep.filter_error_a = 15.0;
    keep.filter_error_b = 18.0;
    PairRecord reject = random_record(rng, Stage::fitted, 1);
    reject.filter_error_a = 15.0;
    reject.filter_error_b = 25.0;

    const StageOutcome out = run_stage("filter", {keep, reject}, config, {});
    REQUIRE(out.summary.processed == 2);
    REQUIRE(out.summary.failed == 0);
    REQUIRE(out.summary.filtered == 1);
    REQUIRE(out.records.size() == 1);
    REQUIRE(out.records[0].image_name == keep.image_name);
    REQUIRE(out.records[0].stage == Stage::filtered);
    REQUIRE(out.records[0].provenance.config_digest == pipeline_config_digest(config));
    REQUIRE(out.records[0].provenance.seed ==
            record_seed(config.seed, keep.image_name, keep.person_a, keep.person_b));

    SECTION("boundary errors are rejected") {
        PairRecord at = random_record(rng, Stage::fitted, 2);
        at.filter_error_a = 20.0;
        at.filter_error_b = 10.0;
        const StageOutcome edge = run_stage("filter", {at}, config, {});
        REQUIRE(edge.summary.filtered == 1);
        REQUIRE(edge.records.empty());
    }
}

TEST_CASE("denoise passes through empty contact lists") {
    PipelineConfig config;
    StageContext ctx;
    ctx.model = &asset();

    Rng rng(3);
    PairRecord rec = random_record(rng, Stage::asked, 0);
    rec.lvlm_output->contacts.clear();

    const StageOutcome out = run_stage("denoise", {rec}, config, ctx);
    REQUIRE(out.summary.processed == 1);
    REQUIRE(out.summary.failed == 0);
    REQUIRE(out.records[0].stage == Stage::denoised);
    REQUIRE(out.records[0].denoised_contacts.empty());

    const StageOutcome again = run_stage("denoise", out.records, config, ctx);
    REQUIRE(again.summary.processed == 0);
    REQUIRE(again.summary.failed == 0);
    REQUIRE(again.records[0] == out.records[0]);  // re-run is a no-op
}

TEST_CASE("fit completes a batch around an unconstrained record") {
    const PipelineConfig config = fast_fit_config();
    StageContext ctx;
    ctx.model = &asset();

    std::vector<PairRecord> asked;
    unsigned seed = 31;
    for (const char* tmpl : {"handshake", "hug", "handshake", "hug"})
        asked.push_back(synth_record(tmpl, seed++, config));
    PairRecord bad = synth_record("high-five", 77, config);
    for (auto& p : bad.kps_b.points) p.confidence = 0.0;  // nothing constrains person b
    asked.push_back(bad);

    const StageOutcome denoised = run_stage("denoise", asked, config, ctx);
    REQUIRE(denoised.summary.processed == 5);
    REQUIRE(denoised.summary.failed == 0);

    const StageOutcome fitted = run_stage("fit", denoised.records, config, ctx);
    REQUIRE(fitted.summary.processed == 4);
    REQUIRE(fitted.summary.failed == 1);
    REQUIRE(fitted.summary.filtered == 0);
    int fitted_count = 0;
    for (const auto& rec : fitted.records) {
        if (rec.stage == Stage::fitted) {
            ++fitted_count;
            REQUIRE(rec.params_a.has_value());
            REQUIRE(rec.filter_error_a.has_value());
            REQUIRE(!rec.error);
        } else {
            REQUIRE(rec.stage == Stage::denoised);
            REQUIRE(rec.error.has_value());
            REQUIRE_THAT(*rec.error, ContainsSubstring("unconstrained"));
        }
    }
    REQUIRE(fitted_count == 4);

    SECTION("re-running fit on fitted records is a no-op") {
        std::vector<PairRecord> done;
        for (const auto& rec : fitted.records)
            if (rec.stage == Stage::fitted) done.push_back(rec);
        const StageOutcome again = run_stage("fit", done, config, ctx);
        REQUIRE(again.summary.processed == 0);
        REQUIRE(again.summary.failed == 0);
        for (size_t i = 0; i < done.size(); ++i) REQUIRE(again.records[i] == done[i]);
    }
    SECTION("order and worker count do not change results") {
        std::vector<PairRecord> reversed(denoised.records.rbegin(), denoised.records.rend());
        PipelineConfig parallel = config;
        parallel.workers = 2;
        const StageOutcome redo = run_stage("fit", reversed, parallel, ctx);
        REQUIRE(redo.summary.processed == 4);
        REQUIRE(redo.records.size() == fitted.records.size());
        for (size_t i = 0; i < redo.records.size(); ++i) {
            // Digests differ (worker count is config); everything else matches.
            nlohmann::json a = record_to_json(redo.records[i]);
            nlohmann::json b = record_to_json(fitted.records[i]);
            a["provenance"].erase("config_digest");
            b["provenance"].erase("config_digest");
            REQUIRE(a == b);
        }
    }
}

TEST_CASE("ask stage queries the provider and annotates missing responses") {
    const fs::path images = scratch_dir("ask_images");
    const fs::path mocks = scratch_dir("ask_mocks");
    const fs::path cache = scratch_dir("ask_cache");

    const std::string bytes_a = "synthetic image bytes one";
    spit(images / "img-0.png", bytes_a);
    spit(images / "img-1.png", "synthetic image bytes two");

    Rng rng(8);
    InteractionAnnotation ann = random_annotation(rng);
    ann.interaction = "hugging";
    spit(MockProvider::response_path(mocks, Bytes(bytes_a.begin(), bytes_a.end())),
         annotation_to_json(ann).dump());

    MockProvider provider(mocks);
    CachingClient client(provider, cache);
    PipelineConfig config;
    StageContext ctx;
    ctx.client = &client;
    ctx.image_dir = images.string();

    PairRecord rec_a = random_record(rng, Stage::proposed, 0);
    PairRecord rec_b = random_record(rng, Stage::proposed, 1);
    PairRecord rec_c = random_record(rng, Stage::proposed, 2);
    rec_c.image_name = "img-2.png";  // no such image file

    const StageOutcome out = run_stage("ask", {rec_a, rec_b, rec_c}, config, ctx);
    REQUIRE(out.summary.processed == 1);
    REQUIRE(out.summary.failed == 2);
    for (const auto& rec : out.records) {
        if (rec.image_name == "img-0.png") {
            REQUIRE(rec.stage == Stage::asked);
            REQUIRE(rec.lvlm_output.has_value());
            REQUIRE(*rec.lvlm_output == ann);
            REQUIRE(rec.interaction == "hugging");
        } else if (rec.image_name == "img-1.png") {
            REQUIRE(rec.stage == Stage::proposed);
            REQUIRE_THAT(rec.error.value(), ContainsSubstring("no response"));
        } else {
            REQUIRE(rec.stage == Stage::proposed);
            REQUIRE_THAT(rec.error.value(), ContainsSubstring("cannot open image file"));
        }
    }
}

TEST_CASE("synthetic records reconstruct their scenes") {
    PipelineConfig config;
    const unsigned seed = 21;
    const GtScene scene = generate_scene("hug", asset(), seed, config.synth.tau);
    const Observations obs =
        corrupt(scene, config.synth.corruption, seed + kSynthObservationSeedOffset, asset());
    const PairRecord rec = make_synth_record(scene, obs);

    REQUIRE(rec.stage == Stage::asked);
    REQUIRE(rec.image_name == "synth-hug-21.png");
    REQUIRE(rec.interaction == "hug");
    const auto tag = parse_synth_source(rec.provenance.source);
    REQUIRE(tag.has_value());
    REQUIRE(tag->first == "hug");
    REQUIRE(tag->second == seed);

    const auto rebuilt = reconstruct_synth_scene(rec, config, asset());
    REQUIRE(rebuilt.has_value());
    REQUIRE(pack_pair(rebuilt->first.truth_a, rebuilt->first.truth_b) ==
            pack_pair(scene.truth_a, scene.truth_b));
    REQUIRE(pack_pair(rebuilt->second.init.a, rebuilt->second.init.b) ==
            pack_pair(obs.init.a, obs.init.b));
    REQUIRE(rebuilt->second.init.source == InitSource::synth_oracle);
    REQUIRE(rebuilt->second.kps_a.points.size() == rec.kps_a.points.size());
    for (size_t i = 0; i < rec.kps_a.points.size(); ++i) {
        REQUIRE(rebuilt->second.kps_a.points[i].x == rec.kps_a.points[i].x);
        REQUIRE(rebuilt->second.kps_a.points[i].y == rec.kps_a.points[i].y);
    }

    SECTION("non-synthetic sources yield nothing") {
        for (const char* source : {"detector", "synth:", "synth:hug:years", ""}) {
            PairRecord other = rec;
            other.provenance.source = source;
            REQUIRE(!parse_synth_source(other.provenance.source).has_value());
            REQUIRE(!reconstruct_synth_scene(other, config, asset()).has_value());
        }
    }
}

TEST_CASE("records not ready for a stage are error-annotated") {
    const PipelineConfig config = fast_fit_config();
    StageContext ctx;
    ctx.model = &asset();

    Rng rng(9);
    const PairRecord early = random_record(rng, Stage::proposed, 0);
    const StageOutcome out = run_stage("fit", {early}, config, ctx);
    REQUIRE(out.summary.processed == 0);
    REQUIRE(out.summary.failed == 1);
    REQUIRE(out.records[0].stage == Stage::proposed);
    REQUIRE_THAT(out.records[0].error.value(),
                 ContainsSubstring("not ready for stage 'fit'"));
}

TEST_CASE("stage orchestration rejects bad configs and missing assets") {
    PipelineConfig config;
    REQUIRE_THROWS_WITH(run_stage("render", {}, config, {}),
                        ContainsSubstring("unknown stage 'render'"));
    REQUIRE_THROWS_WITH(run_stage("denoise", {}, config, {}),
                        ContainsSubstring("body model"));
    REQUIRE_THROWS_WITH(run_stage("ask", {}, config, {}),
                        ContainsSubstring("annotation client"));
    PipelineConfig broken;
    broken.workers = 0;
    REQUIRE_THROWS_AS(run_stage("filter", {}, broken, {}), ValidationError);
}

TEST_CASE("proposal records inherit detector data") {
    Rng rng(14);
    std::vector<PersonDetection> people;
    for (int id : {4, 9}) {
        PersonDetection det;
        det.id = id;
        det.keypoints = random_keypoints(rng, 12);
        people.push_back(det);
    }
    CandidatePair pair;
    pair.person_a = 4;
    pair.person_b = 9;
    pair.image = "street.png";
    pair.pair_bbox = {10.0, 20.0, 200.0, 150.0};
    pair.action = "dancing";

    const auto records = records_from_candidates({pair}, people, "detector:unit");
    REQUIRE(records.size() == 1);
    REQUIRE(records[0].stage == Stage::proposed);
    REQUIRE(records[0].image_name == "street.png");
    REQUIRE(records[0].interaction == "dancing");
    REQUIRE(records[0].provenance.source == "detector:unit");
    REQUIRE(records[0].kps_a.points.size() == 12);
    REQUIRE(records[0].kps_a.points[0].x == people[0].keypoints.points[0].x);
    REQUIRE(records[0].kps_b.points[0].x == people[1].keypoints.points[0].x);

    CandidatePair orphan = pair;
    orphan.person_b = 12;
    REQUIRE_THROWS_WITH(records_from_candidates({orphan}, people, "detector:unit"),
                        ContainsSubstring("unknown person id 12"));

    SECTION("detection json parses keypoints and ids") {
        const nlohmann::json j = {
            {"image", "street.png"},
            {"people",
             {{{"id", 4},
               {"keypoints", {{1.0, 2.0, 0.9, "left"}, {3.0, 4.0, 0.8, "right"}}}}}}};
        const auto [image, parsed] = detections_from_json(j);
        REQUIRE(image == "street.png");
        REQUIRE(parsed.size() == 1);
        REQUIRE(parsed[0].id == 4);
        REQUIRE(parsed[0].keypoints.points.size() == 2);
        REQUIRE(parsed[0].keypoints.points[1].side == Laterality::right);
        REQUIRE(parsed[0].bbox.w == 2.0);
    }
}
