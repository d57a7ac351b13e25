// diffpoi: preprocess / train / eval / trace / groups.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "diffpoi/core/error.hpp"
#include "diffpoi/evalcli/evaluate.hpp"
#include "diffpoi/evalcli/synthetic.hpp"
#include "diffpoi/ingest/checkin.hpp"
#include "diffpoi/ingest/dataset.hpp"
#include "diffpoi/model/checkpoint.hpp"
#include "diffpoi/model/config.hpp"
#include "diffpoi/model/model.hpp"

namespace fs = std::filesystem;
using namespace diffpoi;
using nlohmann::json;

namespace {

constexpr const char* kSeedEnv = "DIFFPOI_SEED";

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << j.dump(2) << '\n';
    if (!out) throw DataError("failed writing " + path.string());
}

std::uint64_t parse_seed(const std::string& text, const std::string& source) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw UsageError(source + ": seed must be a nonnegative integer, got '" + text + "'");
    }
}

// --seed beats DIFFPOI_SEED beats the config file.
void apply_seed_override(model::TrainConfig& cfg, const std::optional<std::string>& flag) {
    if (flag) {
        cfg.seed = parse_seed(*flag, "--seed");
    } else if (const char* env = std::getenv(kSeedEnv); env && *env) {
        cfg.seed = parse_seed(env, kSeedEnv);
    }
}

std::vector<double> parse_boundaries(const std::string& text) {
    std::vector<double> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("--boundaries: not a number: '" + item + "'");
        }
    }
    return out;
}

json dataset_stats(const ingest::CheckinDataset& ds) {
    return {{"users", ds.users.size()},
            {"pois", ds.pois.size()},
            {"interactions", ds.interactions()},
            {"avg_visit", ds.avg_visit()},
            {"train", ds.count(ingest::Split::train)},
            {"valid", ds.count(ingest::Split::valid)},
            {"test", ds.count(ingest::Split::test)}};
}

// Data directory: explicit flag, else the one recorded in the checkpoint.
fs::path resolve_data(const std::string& flag, const json& manifest) {
    if (!flag.empty()) return flag;
    const auto recorded = manifest.value("data_dir", std::string());
    if (recorded.empty()) throw UsageError("--data is required: the checkpoint records no data directory");
    return recorded;
}

struct PreprocessArgs {
    std::string input, format = "canonical", out;
    std::size_t min_core = 5;
    bool synthetic = false;
    evalcli::SyntheticConfig syn;
};

int run_preprocess(const PreprocessArgs& a) {
    ingest::CheckinDataset ds;
    json report;
    if (a.synthetic) {
        ds = evalcli::synthetic_dataset(a.syn);
    } else {
        if (a.input.empty()) throw UsageError("preprocess: --input or --synthetic is required");
        ingest::ParseReport pr;
        auto records = ingest::parse_checkins(a.input, ingest::parse_format(a.format), &pr);
        const auto parsed = records.size();
        ds = ingest::build_dataset(ingest::five_core_filter(std::move(records), a.min_core));
        ds.provenance = {{"source", a.input}, {"format", a.format}, {"min_core", a.min_core}};
        report = {{"lines", pr.lines}, {"malformed", pr.malformed}, {"parsed", parsed}, {"diagnostics", pr.messages}};
    }
    if (ds.users.empty()) throw DataError("preprocess: nothing survives filtering");
    ingest::save_dataset(ds, a.out);
    json out = dataset_stats(ds);
    if (!report.is_null()) out["parse"] = report;
    std::cout << out.dump(2) << '\n';
    return 0;
}

struct TrainArgs {
    std::string config, data, out, log;
    std::optional<std::string> seed;
    bool quiet = false;
};

int run_train(const TrainArgs& a) {
    auto cfg = model::load_config(a.config);
    apply_seed_override(cfg, a.seed);
    const auto ds = ingest::load_dataset(a.data);
    model::Model m(cfg, ds.coordinates());
    const auto result = model::fit(m, ds, [&](const model::EpochRecord& r) {
        if (!a.quiet) std::cerr << "epoch " << r.epoch << " loss " << r.loss << " ce " << r.ce << " fisher " << r.fisher
                                << " valid_recall10 " << r.valid_recall10 << (r.improved ? " *" : "") << '\n';
    });
    model::save_checkpoint(a.out, m, fs::absolute(a.data).lexically_normal().string());
    json log = model::to_json(result);
    log["schema_version"] = evalcli::kReportSchemaVersion;
    log["seed"] = cfg.seed;
    log["config"] = model::to_json(cfg);
    log["config_fingerprint"] = evalcli::fingerprint(model::to_json(cfg));
    write_json(a.log.empty() ? fs::path(a.out + ".log.json") : fs::path(a.log), log);
    return 0;
}

struct EvalArgs {
    std::string ckpt, data, split = "test", report, groups, scorer = "diffpoi";
    std::uint64_t random_seed = 0;
};

int run_eval(const EvalArgs& a) {
    const auto split = ingest::parse_split(a.split);
    if (split == ingest::Split::train) throw UsageError("eval: --split must be valid or test");
    std::optional<model::CheckpointFile> file;
    if (a.scorer == "diffpoi") {
        if (a.ckpt.empty()) throw UsageError("eval: --ckpt is required for the diffpoi scorer");
        file = model::read_checkpoint(a.ckpt);
    } else if (a.data.empty()) {
        throw UsageError("eval: --data is required for baseline scorers");
    }
    const auto ds = ingest::load_dataset(file ? resolve_data(a.data, file->manifest) : fs::path(a.data));

    std::function<std::string(std::size_t)> group_of;
    std::optional<evalcli::MobilityGroups> groups;
    if (!a.groups.empty()) {
        groups = evalcli::group_users_by_mobility(ds, parse_boundaries(a.groups));
        group_of = [&](std::size_t u) { return groups->bucket[u]; };
    }

    evalcli::MetricsReport r;
    if (file) {
        const auto m = model::restore_model(*file, ds);
        r = evalcli::evaluate(m, ds, split, group_of);
    } else {
        evalcli::Scorer scorer;
        if (a.scorer == "popularity") {
            scorer = evalcli::popularity_scorer(ds);
        } else if (a.scorer == "random") {
            scorer = evalcli::random_scorer(ds.pois.size(), a.random_seed);
        } else if (a.scorer == "oracle") {
            scorer = evalcli::oracle_scorer(ds.pois.size());
        } else {
            throw UsageError("eval: unknown scorer '" + a.scorer + "'");
        }
        const auto samples = evalcli::plain_samples(ds, split);
        r = evalcli::summarize(samples, evalcli::ranks_for(samples, scorer), a.scorer, split, group_of);
        r.seed = a.random_seed;
    }
    auto j = evalcli::to_json(r);
    if (groups) j["group_boundaries_km"] = groups->boundaries;
    if (a.report.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        write_json(a.report, j);
    }
    return 0;
}

struct TraceArgs {
    std::string ckpt, data, user, out, split = "test";
    std::size_t visit = 0, top = 100;
};

int run_trace(const TraceArgs& a) {
    const auto file = model::read_checkpoint(a.ckpt);
    const auto ds = ingest::load_dataset(resolve_data(a.data, file.manifest));
    const auto split = ingest::parse_split(a.split);
    if (split == ingest::Split::train) throw UsageError("trace: --split must be valid or test");
    const auto m = model::restore_model(file, ds);
    std::vector<model::Sample> mine;
    for (auto& s : m.samples(ds, split)) {
        if (ds.users[s.user].id == a.user) mine.push_back(std::move(s));
    }
    if (mine.empty()) throw DataError("trace: user '" + a.user + "' has no " + a.split + " visits");
    if (a.visit >= mine.size()) {
        throw UsageError("trace: --visit " + std::to_string(a.visit) + " out of range (user has " +
                         std::to_string(mine.size()) + ")");
    }
    const auto tr = evalcli::sampling_trace(m, ds, mine[a.visit], split, a.top);
    const fs::path csv(a.out);
    if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
    {
        std::ofstream out(csv, std::ios::binary);
        evalcli::write_trace_csv(out, tr);
        if (!out) throw DataError("failed writing " + csv.string());
    }
    auto manifest = evalcli::trace_manifest(tr, csv.filename().string());
    manifest["split"] = a.split;
    manifest["visit"] = a.visit;
    write_json(fs::path(a.out + ".json"), manifest);
    return 0;
}

struct GroupsArgs {
    std::string data, boundaries = "5,10,15", out;
};

int run_groups(const GroupsArgs& a) {
    const auto ds = ingest::load_dataset(a.data);
    const auto g = evalcli::group_users_by_mobility(ds, parse_boundaries(a.boundaries));
    const auto j = evalcli::to_json(g, ds);
    if (a.out.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        write_json(a.out, j);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Diffusion-based next-POI recommender"};
    app.require_subcommand(1);

    PreprocessArgs pre;
    auto* p = app.add_subcommand("preprocess", "Parse check-ins, 5-core filter, split and write a data directory");
    p->add_option("--input", pre.input, "Check-in file");
    p->add_option("--format", pre.format, "canonical | gowalla | foursquare")->capture_default_str();
    p->add_option("--out", pre.out, "Output data directory")->required();
    p->add_option("--min-core", pre.min_core, "Core threshold")->capture_default_str();
    p->add_flag("--synthetic", pre.synthetic, "Generate the clustered synthetic dataset instead of reading --input");
    p->add_option("--users", pre.syn.users)->capture_default_str();
    p->add_option("--pois", pre.syn.pois)->capture_default_str();
    p->add_option("--clusters", pre.syn.clusters)->capture_default_str();
    p->add_option("--synthetic-seed", pre.syn.seed)->capture_default_str();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train and write a checkpoint");
    t->add_option("--config", tr.config, "Flat key=value or JSON config")->required();
    t->add_option("--data", tr.data, "Data directory from preprocess")->required();
    t->add_option("--out", tr.out, "Checkpoint path")->required();
    t->add_option("--log", tr.log, "Training log JSON (default <out>.log.json)");
    t->add_option("--seed", tr.seed, std::string("Seed override (also ") + kSeedEnv + ")");
    t->add_flag("--quiet", tr.quiet);

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Score a split and write a metrics report");
    e->add_option("--ckpt", ev.ckpt, "Checkpoint path");
    e->add_option("--data", ev.data, "Data directory (default: the one recorded in the checkpoint)");
    e->add_option("--split", ev.split)->capture_default_str();
    e->add_option("--report", ev.report, "Report JSON path (default stdout)");
    e->add_option("--groups", ev.groups, "Mobility boundaries in km, e.g. 5,10,15");
    e->add_option("--scorer", ev.scorer, "diffpoi | popularity | random | oracle")->capture_default_str();
    e->add_option("--random-seed", ev.random_seed)->capture_default_str();

    TraceArgs tc;
    auto* c = app.add_subcommand("trace", "Export the sampling trace of one user as CSV plus a JSON manifest");
    c->add_option("--ckpt", tc.ckpt)->required();
    c->add_option("--user", tc.user, "Raw user id")->required();
    c->add_option("--out", tc.out, "CSV path; the manifest goes to <out>.json")->required();
    c->add_option("--data", tc.data);
    c->add_option("--split", tc.split)->capture_default_str();
    c->add_option("--visit", tc.visit, "Which of the user's split visits")->capture_default_str();
    c->add_option("--top", tc.top)->capture_default_str();

    GroupsArgs gr;
    auto* g = app.add_subcommand("groups", "Bucket users by mean successive-visit distance");
    g->add_option("--data", gr.data)->required();
    g->add_option("--boundaries", gr.boundaries)->capture_default_str();
    g->add_option("--out", gr.out, "JSON path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*p) return run_preprocess(pre);
        if (*t) return run_train(tr);
        if (*e) return run_eval(ev);
        if (*c) return run_trace(tc);
        if (*g) return run_groups(gr);
    } catch (const UsageError& err) {
        std::cerr << "usage error: " << err.what() << '\n';
        return 1;
    } catch (const NumericalError& err) {
        std::cerr << "numerical failure: " << err.what() << '\n';
        return 3;
    } catch (const DataError& err) {
        std::cerr << "data error: " << err.what() << '\n';
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 2;
    }
    return 1;
}
