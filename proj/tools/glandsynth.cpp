#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "glandsynth/curation.hpp"
#include "glandsynth/curation_server.hpp"
#include "glandsynth/errors.hpp"
#include "glandsynth/harness.hpp"
#include "glandsynth/png_io.hpp"
#include "glandsynth/seeds.hpp"

using namespace gsyn;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string scale;
    std::string out = "runs";
    bool quiet = false;
};

struct Settings {
    ExperimentConfig base;   // row Original, no synthetic block
    SyntheticConfig synthetic;
};

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    return nlohmann::json::parse(in);
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

// The config document mirrors ExperimentConfig; its "synthetic" block holds the synthetic
// settings shared by every row that needs them.
Settings load_settings(const Globals& g) {
    nlohmann::json doc = g.config_path.empty() ? nlohmann::json::object() : read_json(g.config_path);
    if (!g.scale.empty()) doc["scale"] = g.scale;
    if (g.seed) doc["root_seed"] = *g.seed;
    const Scale scale = parse_scale(doc.value("scale", std::string("desk")));

    nlohmann::json syn = preset_synthetic(scale);
    if (doc.contains("synthetic")) {
        if (!doc["synthetic"].is_null()) merge_known_fields(syn, doc["synthetic"], "synthetic config");
        doc.erase("synthetic");
    }
    doc.erase("row");
    doc.erase("combine_with_synthetic");

    Settings s;
    s.base = doc.get<ExperimentConfig>();
    s.synthetic = syn.get<SyntheticConfig>();
    s.base.validate();
    return s;
}

ProgressFn progress(const Globals& g) {
    if (g.quiet) return {};
    return [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); };
}

std::vector<Mask> training_masks(const ExperimentConfig& c, const PreparedDataset& data) {
    std::vector<Mask> masks;
    for (const auto& s : gather_slices(data, split_for(c, data).train, false)) masks.push_back(s.mask);
    return masks;
}

std::string slug(std::string_view label) {
    std::string out;
    for (char ch : label) out += ch == ' ' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

ExperimentConfig row_from_flags(const Settings& s, const std::string& row, bool with_synthetic) {
    auto c = row_config(s.base, parse_row_label(row), with_synthetic, s.synthetic);
    c.validate();
    return c;
}

volatile std::sig_atomic_t g_interrupted = 0;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"glandsynth: GAN-based augmentation pipeline for prostate MRI segmentation"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "JSON document mirroring the experiment config")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Root seed");
    app.add_option("--scale", g.scale, "Preset: desk or full")->check(CLI::IsMember({"desk", "full"}));
    app.add_option("--out", g.out, "Output directory");
    app.add_flag("--quiet", g.quiet, "No progress output");

    auto* prepare = app.add_subcommand("prepare", "Preprocess the dataset and write the split and slices");
    bool write_slices = false;
    prepare->add_flag("--write-slices", write_slices, "Also write every preprocessed slice as PNG");

    auto* train_seg = app.add_subcommand("train-seg", "Train the segmenter for one row");
    std::string row = "Original";
    bool with_synthetic = false;
    train_seg->add_option("--row", row, "Row label, e.g. \"Zoom\" or \"Synthetic data\"");
    train_seg->add_flag("--with-synthetic", with_synthetic, "Add synthetic pairs to a standard row");

    auto* train_maskgan = app.add_subcommand("train-maskgan", "Train the mask GAN on training-split masks");
    int n_samples = 16;
    train_maskgan->add_option("--samples", n_samples, "Masks to export after training");

    auto* screen = app.add_subcommand("screen-masks", "Generate masks and add them to a curation ledger");
    std::string generator_path;
    std::string ledger_path;
    int n_masks = 64;
    bool leave_pending = false;
    std::string preview_translator;
    screen->add_option("--generator", generator_path, "Mask generator checkpoint")->required();
    screen->add_option("--ledger", ledger_path, "Curation ledger (default <out>/curation/ledger.ndjson)");
    screen->add_option("--n", n_masks, "Masks to generate");
    screen->add_flag("--pending", leave_pending, "Leave candidates pending for human review");
    screen->add_option("--translator", preview_translator, "Translator checkpoint for T2 previews");

    auto* serve = app.add_subcommand("serve-review", "Host the curation API");
    std::string host = "127.0.0.1";
    int port = 8080;
    serve->add_option("--ledger", ledger_path, "Curation ledger")->required();
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port (0 picks a free one)");

    auto* train_p2p = app.add_subcommand("train-pix2pix", "Train the mask-to-T2 translator");

    auto* synthesize = app.add_subcommand("synthesize", "Translate accepted masks into paired T2 images");
    std::string translator_path;
    std::size_t n_pairs = 0;
    synthesize->add_option("--ledger", ledger_path, "Curation ledger")->required();
    synthesize->add_option("--translator", translator_path, "Translator checkpoint")->required();
    synthesize->add_option("--n", n_pairs, "Pairs to write (0: one per accepted mask; more cycle)");

    auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a segmenter checkpoint on the test split");
    std::string unet_path;
    evaluate_cmd->add_option("--checkpoint", unet_path, "Segmenter checkpoint")->required();

    auto* table = app.add_subcommand("table", "Run all eight rows and write the results table");
    table->add_flag("--with-synthetic", with_synthetic, "Standard rows additionally receive synthetic pairs");

    auto* sweep = app.add_subcommand("sweep", "Synthetic sample-size sweep");
    std::vector<long> counts;
    sweep->add_option("--counts", counts, "Synthetic counts (default: the scale's geometric ladder)")->delimiter(',');

    CLI11_PARSE(app, argc, argv);

    try {
        const Settings s = load_settings(g);
        const fs::path out = g.out;
        fs::create_directories(out);
        PreprocessCache cache;
        RunContext ctx;
        ctx.cache = &cache;
        ctx.progress = progress(g);
        auto data = [&] { return cache.get(s.base.dataset, s.base.preprocess); };

        if (*prepare) {
            const auto d = data();
            const auto split = split_for(s.base, *d);
            write_json(out / "split.json", split);
            nlohmann::json summary{{"patients", d->patients.size()},
                                   {"warnings", d->warnings},
                                   {"config_hash", config_hash(s.base)},
                                   {"config", s.base}};
            std::size_t slices = 0;
            for (const auto& p : d->patients) {
                slices += p.slices.size();
                if (!write_slices) continue;
                fs::create_directories(out / "prepared" / p.id);
                for (const auto& sl : p.slices) {
                    char name[64];
                    std::snprintf(name, sizeof name, "slice_%03d", sl.slice_index);
                    write_png(out / "prepared" / p.id / (std::string(name) + "_t2.png"), image_to_gray(sl.image));
                    write_png(out / "prepared" / p.id / (std::string(name) + "_mask.png"), mask_to_gray(sl.mask));
                }
            }
            summary["slices"] = slices;
            write_json(out / "prepared.json", summary);
            std::printf("%zu patients, %zu slices; split %zu/%zu/%zu\n", d->patients.size(), slices,
                        split.train.size(), split.val.size(), split.test.size());
        } else if (*train_seg) {
            const auto c = row_from_flags(s, row, with_synthetic);
            auto trained = train_row(c, ctx);
            const fs::path dir = out / ("seg_" + slug(row_label(c.row)));
            fs::create_directories(dir);
            save_unet(dir / "unet.ckpt", trained.model, c.train, c.root_seed);
            write_text(dir / "history.csv", trained.history.to_csv());
            write_json(dir / "config.json", c);
            std::printf("%s\n", (dir / "unet.ckpt").c_str());
        } else if (*train_maskgan) {
            const auto c = row_from_flags(s, "Synthetic data", false);
            const auto real = training_masks(c, *data());
            const auto seed = derive_seed(c.root_seed, "maskgan");
            auto gan = train_mask_gan(real, s.synthetic.maskgan, seed, [&](long it, double d, double gl) {
                if (!g.quiet && (it % 25 == 0)) std::fprintf(stderr, "iteration %ld d %.4f g %.4f\n", it, d, gl);
            });
            const fs::path dir = out / "maskgan";
            save_mask_generator(dir / "generator.ckpt", gan.generator, seed);
            std::string csv = "iteration,d_loss,g_loss\n";
            for (std::size_t i = 0; i < gan.history.d_loss.size(); ++i) {
                csv += std::to_string(i + 1) + "," + std::to_string(gan.history.d_loss[i]) + "," +
                       std::to_string(gan.history.g_loss[i]) + "\n";
            }
            write_text(dir / "history.csv", csv);
            export_masks(dir / "samples", "sample",
                         generate_masks(gan.generator, n_samples, derive_seed(c.root_seed, "gan-sampling"),
                                        s.synthetic.mask_threshold));
            std::printf("%s\n", (dir / "generator.ckpt").c_str());
        } else if (*screen) {
            const auto c = row_from_flags(s, "Synthetic data", false);
            CurationOptions opts;
            opts.bounds = fit_area_bounds(training_masks(c, *data()));
            opts.auto_verdicts = !leave_pending;
            const fs::path ledger = ledger_path.empty() ? out / "curation" / "ledger.ndjson" : fs::path(ledger_path);
            if (ledger.has_parent_path()) fs::create_directories(ledger.parent_path());
            CurationStore store(ledger, opts);
            auto generator = load_mask_generator(generator_path);
            const std::size_t first = store.list().size();
            const auto masks = generate_masks(generator, n_masks,
                                              derive_seed(derive_seed(c.root_seed, "gan-sampling"), first),
                                              s.synthetic.mask_threshold);
            const auto ids = store.ingest_all(masks, "cand", first);
            if (!preview_translator.empty()) {
                auto translator = load_translator(preview_translator);
                const auto previews = translate_masks(translator, masks);
                for (std::size_t i = 0; i < ids.size(); ++i) store.set_preview(ids[i], previews[i]);
            }
            const auto st = store.stats();
            std::printf("ledger %s: %zu pending, %zu accepted, %zu rejected\n", ledger.c_str(), st.pending, st.accepted,
                        st.rejected);
        } else if (*serve) {
            CurationOptions opts;
            opts.auto_verdicts = false;
            CurationStore store(fs::path(ledger_path), opts);
            CurationServer server(store);
            const int bound = server.bind(host, port);
            std::printf("serving %s on http://%s:%d/api/stats\n", ledger_path.c_str(), host.c_str(), bound);
            std::fflush(stdout);
            static CurationServer* active = &server;
            std::signal(SIGINT, [](int) {
                g_interrupted = 1;
                active->stop();
            });
            std::signal(SIGTERM, [](int) {
                g_interrupted = 1;
                active->stop();
            });
            server.serve();
        } else if (*train_p2p) {
            const auto c = row_from_flags(s, "Synthetic data", false);
            const auto d = data();
            const auto pairs = gather_slices(*d, split_for(c, *d).train, false);
            const auto seed = derive_seed(c.root_seed, "pix2pix");
            auto p2p = train_translator(pairs, s.synthetic.pix2pix, seed, [&](long it, double dl, double l1) {
                if (!g.quiet && (it % 50 == 0)) std::fprintf(stderr, "iteration %ld d %.4f l1 %.4f\n", it, dl, l1);
            });
            const fs::path dir = out / "pix2pix";
            save_translator(dir / "translator.ckpt", p2p.generator, seed);
            std::string csv = "iteration,d_loss,g_adv,g_l1,g_total\n";
            for (std::size_t i = 0; i < p2p.history.d_loss.size(); ++i) {
                csv += std::to_string(i + 1) + "," + std::to_string(p2p.history.d_loss[i]) + "," +
                       std::to_string(p2p.history.g_adv[i]) + "," + std::to_string(p2p.history.g_l1[i]) + "," +
                       std::to_string(p2p.history.g_total[i]) + "\n";
            }
            write_text(dir / "history.csv", csv);
            std::printf("%s\n", (dir / "translator.ckpt").c_str());
        } else if (*synthesize) {
            CurationOptions opts;
            opts.auto_verdicts = false;
            CurationStore store(fs::path(ledger_path), opts);
            auto translator = load_translator(translator_path);
            std::vector<std::string> accepted;
            for (const auto& a : store.export_accepted()) accepted.push_back(a.id);
            if (accepted.empty()) throw std::runtime_error("no accepted masks in " + ledger_path);
            const std::size_t n = n_pairs == 0 ? accepted.size() : n_pairs;
            std::vector<std::string> ids;
            for (std::size_t i = 0; i < n; ++i) ids.push_back(accepted[i % accepted.size()]);
            const auto pairs = synthesize_pairs(translator, store, ids, fs::path(ledger_path).stem().string(),
                                                fs::path(translator_path).filename().string());
            const auto manifest = export_pairs(out / "synthetic", pairs);
            std::printf("%s\n", manifest.c_str());
        } else if (*evaluate_cmd) {
            auto model = load_unet(unet_path);
            const auto d = data();
            const auto report = evaluate_patients(model, *d, split_for(s.base, *d).test, s.base.eval);
            write_json(out / "metrics.json", report);
            std::printf("%s\n%s\n", metrics_csv_header().c_str(), metrics_csv_row(report).c_str());
        } else if (*table) {
            ctx.results_ledger = out / "results.ndjson";
            const auto t = run_table(s.base, s.synthetic, with_synthetic, ctx);
            const auto rows = table_rows(t);
            const std::string stem = with_synthetic ? "table_combined" : "table";
            write_text(out / (stem + ".csv"), emit_table(rows, TableFormat::csv));
            write_text(out / (stem + ".md"), emit_table(rows, TableFormat::markdown));
            write_json(out / (stem + ".json"), t);
            std::fputs(emit_table(rows, TableFormat::csv).c_str(), stdout);
        } else if (*sweep) {
            if (counts.empty()) counts = default_sweep_counts(s.base.scale);
            ctx.results_ledger = out / "results.ndjson";
            const auto t = sweep_synthetic_size(s.base, s.synthetic, counts, ctx);
            write_text(out / "sweep.csv", emit_sweep_csv(t));
            nlohmann::json j{{"root_seed", t.root_seed}, {"config_hash", t.config_hash}};
            for (const auto& r : t.rows) j["rows"].push_back({{"count", r.count}, {"result", r.result}});
            for (const auto& [count, gain] : doubling_gains(t)) j["doubling_gains"].push_back({{"count", count}, {"dsc_gain", gain}});
            write_json(out / "sweep.json", j);
            std::fputs(emit_sweep_csv(t).c_str(), stdout);
            for (const auto& [count, gain] : doubling_gains(t)) {
                std::printf("doubling to %ld: DSC %+.2f points\n", count, gain);
            }
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return g_interrupted ? 130 : 0;
}
