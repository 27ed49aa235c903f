#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "udma/config.hpp"
#include "udma/dataio.hpp"
#include "udma/errors.hpp"
#include "udma/evaluation.hpp"
#include "udma/losscheck.hpp"
#include "udma/model.hpp"
#include "udma/preseg.hpp"
#include "udma/projection.hpp"
#include "udma/rng.hpp"
#include "udma/synth.hpp"
#include "udma/taxonomy.hpp"
#include "udma/training.hpp"

namespace fs = std::filesystem;
using namespace udma;

namespace {

// Seed streams per pipeline stage, so adding scans to one stage never
// perturbs another.
constexpr std::uint64_t kStreamTargetScene = 0xA000;
constexpr std::uint64_t kStreamTargetRender = 0xB000;
constexpr std::uint64_t kStreamSourceScene = 0xC000;
constexpr std::uint64_t kStreamSourceRender = 0xD000;
constexpr std::uint64_t kStreamGround = 0xE000;

RunConfig load_or_default(const std::string& path) {
    return path.empty() ? RunConfig{} : load_config(path);
}

std::string numbered(const char* stem, int index, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%04d%s", stem, index, ext);
    return buf;
}

std::vector<std::string> list_numbered(const fs::path& dir, const std::string& prefix,
                                       const std::string& suffix) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (name.size() > prefix.size() + suffix.size() && name.rfind(prefix, 0) == 0 &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            out.push_back(entry.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Train ids back to on-disk raw ids: lowest raw id per class, 0 for ignore
// (0 is unmapped, so it reads back as ignore).
std::vector<std::uint32_t> raw_ids_of(const std::vector<ClassId>& labels,
                                      const ClassTaxonomy& taxonomy) {
    std::map<ClassId, std::uint32_t> inverse;
    for (const auto& [raw, train] : taxonomy.raw_mapping())
        inverse.emplace(train, raw);
    std::vector<std::uint32_t> out(labels.size(), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto it = inverse.find(labels[i]);
        if (it != inverse.end()) out[i] = it->second;
    }
    return out;
}

ComponentMap run_preseg(const PointCloud& cloud, const RunConfig& cfg, std::uint64_t seed) {
    const GroundModel ground = fit_ground(cloud, RansacConfig::from(cfg), seed);
    ComponentMap map = cluster_components(cloud, ground, ClusterConfig::from(cfg),
                                          CategoryConfig::from(cfg));
    assign_prior_categories(map, CategoryConfig::from(cfg));
    return map;
}

std::vector<std::uint8_t> grayscale(const RangeImage& img, const std::string& channel) {
    if (channel != "range" && channel != "intensity")
        throw ConfigError("unknown channel '" + channel + "' (use range or intensity)");
    const std::size_t n = img.pixels();
    std::vector<std::uint8_t> gray(n, 0);
    if (channel == "intensity") {
        for (std::size_t i = 0; i < n; ++i)
            if (img.valid[i])
                gray[i] = static_cast<std::uint8_t>(
                    1 + std::lround(254.0 * std::clamp(img.intensity[i], 0.0, 1.0)));
        return gray;
    }
    double far = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (img.valid[i]) far = std::max(far, img.range[i]);
    for (std::size_t i = 0; i < n; ++i)
        if (img.valid[i])
            gray[i] = far > 0.0 ? static_cast<std::uint8_t>(
                                      1 + std::lround(254.0 * (1.0 - img.range[i] / far)))
                                : 255;
    return gray;
}

void cmd_config(const std::string& cfg_path, bool keys) {
    if (keys) {
        std::cout << config_key_table();
        return;
    }
    std::cout << dump_config(load_or_default(cfg_path));
}

void cmd_synth(const std::string& cfg_path, const std::string& out_dir, int scans,
               int sources) {
    const RunConfig cfg = load_or_default(cfg_path);
    const ClassTaxonomy taxonomy = ClassTaxonomy::evaluation_default();
    const fs::path root(out_dir);
    std::error_code ec;
    fs::create_directories(root / "target", ec);
    fs::create_directories(root / "source", ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

    for (int i = 0; i < scans; ++i) {
        const SceneSpec spec = random_scene(cfg, derive_seed(cfg.seed, kStreamTargetScene + i));
        const SynthScan scan = generate_scan(spec, derive_seed(cfg.seed, kStreamTargetRender + i));
        write_scan((root / "target" / numbered("scan", i, ".bin")).string(), scan.cloud);
        write_raw_labels((root / "target" / numbered("scan", i, ".labels")).string(),
                         raw_ids_of(scan.cloud.labels, taxonomy));
    }
    for (int j = 0; j < sources; ++j) {
        const SceneSpec spec = random_scene(cfg, derive_seed(cfg.seed, kStreamSourceScene + j));
        const SourceSample sample =
            generate_source(spec, derive_seed(cfg.seed, kStreamSourceRender + j), taxonomy);
        write_source_sample((root / "source" / numbered("sample", j, ".bin")).string(), sample);
    }
    std::cout << "wrote " << scans << " target scans and " << sources
              << " source samples under " << out_dir << "\n";
}

void cmd_preseg(const std::string& cfg_path, const std::string& scan_path,
                const std::string& out_path, const std::string& sidecar_path) {
    const RunConfig cfg = load_or_default(cfg_path);
    const PointCloud cloud = read_scan(scan_path);
    const ComponentMap map = run_preseg(cloud, cfg, derive_seed(cfg.seed, kStreamGround));
    write_component_ids(out_path, map.component_id);
    if (!sidecar_path.empty()) {
        std::ofstream f(sidecar_path);
        if (!f) throw IoError("cannot open " + sidecar_path + " for writing");
        f << component_sidecar(map);
        if (!f) throw IoError("short write to " + sidecar_path);
    }
    std::cout << "segmented " << cloud.size() << " points into " << map.num_components()
              << " components\n";
}

void cmd_project(const std::string& cfg_path, const std::string& scan_path,
                 const std::string& components_path, const std::string& out_path,
                 const std::string& preview_path) {
    const RunConfig cfg = load_or_default(cfg_path);
    const PointCloud cloud = read_scan(scan_path);
    std::vector<std::int32_t> components;
    if (!components_path.empty()) {
        components = read_component_ids(components_path);
        if (components.size() != cloud.size())
            throw FormatError("component file holds " + std::to_string(components.size()) +
                              " ids for " + std::to_string(cloud.size()) + " points");
    }
    const RangeImage img = build_range_image(cloud, components, ProjectionConfig::from(cfg));
    write_range_image(out_path, img);
    if (!preview_path.empty())
        write_pgm(preview_path, img.height, img.width, grayscale(img, "range"));
    std::size_t filled = 0;
    for (auto v : img.valid) filled += v;
    std::cout << "projected " << cloud.size() << " points into " << img.width << "x"
              << img.height << " image (" << filled << " pixels filled)\n";
}

struct TargetScan {
    std::string path;
    PointCloud cloud;
    RangeImage image;
    NodeSet nodes;
};

std::vector<TargetScan> load_targets(const fs::path& data_dir, const RunConfig& cfg) {
    const auto paths = list_numbered(data_dir / "target", "scan_", ".bin");
    if (paths.empty())
        throw DomainError("no target scans under " + (data_dir / "target").string());
    const ProjectionConfig beam = ProjectionConfig::from(cfg);
    std::vector<TargetScan> out;
    out.reserve(paths.size());
    for (std::size_t i = 0; i < paths.size(); ++i) {
        TargetScan t;
        t.path = paths[i];
        t.cloud = read_scan(paths[i]);
        const ComponentMap map =
            run_preseg(t.cloud, cfg, derive_seed(cfg.seed, kStreamGround + i));
        t.image = build_range_image(t.cloud, map.component_id, beam);
        t.nodes = target_nodes(t.image, map);
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<SourceSample> load_sources(const fs::path& data_dir) {
    const auto paths = list_numbered(data_dir / "source", "sample_", ".bin");
    if (paths.empty())
        throw DomainError("no source samples under " + (data_dir / "source").string());
    std::vector<SourceSample> out;
    out.reserve(paths.size());
    for (const auto& p : paths) out.push_back(read_source_sample(p));
    return out;
}

void cmd_train(const std::string& cfg_path, const std::string& data_dir,
               const std::string& out_path, const std::string& metrics_path,
               bool fine_tune) {
    const RunConfig cfg = load_or_default(cfg_path);
    const ClassTaxonomy taxonomy = ClassTaxonomy::evaluation_default();
    const auto targets = load_targets(data_dir, cfg);
    const auto sources = load_sources(data_dir);

    std::ofstream metrics_file;
    if (!metrics_path.empty()) {
        metrics_file.open(metrics_path);
        if (!metrics_file) throw IoError("cannot open " + metrics_path + " for writing");
    }
    std::ostream& log = metrics_path.empty() ? std::cout : metrics_file;

    Trainer trainer(ModelConfig::from(cfg, static_cast<int>(taxonomy.num_classes())),
                    TrainerConfig::from(cfg), taxonomy, cfg.seed);
    for (int step = 0; step < cfg.train_steps; ++step) {
        const auto& t = targets[step % targets.size()];
        const auto m = trainer.train_step(sources[step % sources.size()], t.image, t.nodes);
        log << format_metrics(m) << '\n';
    }
    if (fine_tune) {
        for (int step = 0; step < cfg.fine_tune_steps; ++step) {
            const auto& t = targets[step % targets.size()];
            log << format_metrics(trainer.fine_tune_step(t.image, t.nodes)) << '\n';
        }
    }
    if (!metrics_path.empty() && !metrics_file) throw IoError("short write to " + metrics_path);
    trainer.params().save(out_path);
    std::cout << "trained " << cfg.train_steps << " adversarial steps"
              << (fine_tune ? " + " + std::to_string(cfg.fine_tune_steps) + " fine-tune steps"
                            : std::string())
              << ", saved " << out_path << "\n";
}

std::vector<ClassId> pixel_argmax(const std::vector<double>& probs, std::size_t classes,
                                  std::size_t pixels) {
    std::vector<ClassId> out(pixels, 0);
    for (std::size_t px = 0; px < pixels; ++px) {
        double best = probs[px];
        for (std::size_t c = 1; c < classes; ++c) {
            const double v = probs[c * pixels + px];
            if (v > best) {
                best = v;
                out[px] = static_cast<ClassId>(c);
            }
        }
    }
    return out;
}

void cmd_eval(const std::string& cfg_path, const std::string& data_dir,
              const std::string& model_path, const std::string& out_path,
              const std::string& json_path) {
    const RunConfig cfg = load_or_default(cfg_path);
    const ClassTaxonomy taxonomy = ClassTaxonomy::evaluation_default();
    const auto targets = load_targets(data_dir, cfg);
    const ProjectionConfig beam = ProjectionConfig::from(cfg);

    Trainer trainer(ModelConfig::from(cfg, static_cast<int>(taxonomy.num_classes())),
                    TrainerConfig::from(cfg), taxonomy, cfg.seed);
    if (!model_path.empty()) trainer.params().load(model_path);

    ConfusionMatrix cm(taxonomy.num_classes(), taxonomy.ignore_id());
    for (const auto& t : targets) {
        std::string label_path = t.path;
        label_path.replace(label_path.size() - 4, 4, ".labels");
        const auto truth = read_labels(label_path, t.cloud.size(), taxonomy);
        const auto probs = trainer.predict(network_input(t.image), t.image.height,
                                           t.image.width, t.nodes);
        const auto pixel_labels =
            pixel_argmax(probs, taxonomy.num_classes(), t.image.pixels());
        const auto pred = unproject_labels(t.image, pixel_labels, t.cloud, beam,
                                           taxonomy.ignore_id());
        cm.accumulate(truth, pred);
    }
    const IouReport report = miou(cm);
    const std::string table = iou_table(report, taxonomy);
    if (out_path.empty()) {
        std::cout << table;
    } else {
        std::ofstream f(out_path);
        if (!f) throw IoError("cannot open " + out_path + " for writing");
        f << table;
        if (!f) throw IoError("short write to " + out_path);
        std::cout << "evaluated " << targets.size() << " scans, wrote " << out_path << "\n";
    }
    if (!json_path.empty()) {
        std::ofstream f(json_path);
        if (!f) throw IoError("cannot open " + json_path + " for writing");
        f << iou_json(report, taxonomy) << '\n';
        if (!f) throw IoError("short write to " + json_path);
    }
}

bool cmd_gradcheck(const std::string& cfg_path, int seeds, int coords) {
    const RunConfig cfg = load_or_default(cfg_path);
    LossCheckConfig lc;
    lc.model = ModelConfig::from(
        cfg, static_cast<int>(ClassTaxonomy::evaluation_default().num_classes()));
    lc.seeds = seeds;
    lc.max_coords = coords;
    lc.master_seed = cfg.seed;
    bool all_pass = true;
    for (const auto& c : check_loss_gradients(lc)) {
        std::printf("loss=%s max_rel_error=%.3e coords=%lld status=%s\n", c.loss.c_str(),
                    c.max_rel_error, static_cast<long long>(c.coords_checked),
                    c.pass ? "pass" : "fail");
        all_pass = all_pass && c.pass;
    }
    return all_pass;
}

void cmd_viz(const std::string& image_path, const std::string& out_path,
             const std::string& channel) {
    const RangeImage img = read_range_image(image_path);
    write_pgm(out_path, img.height, img.width, grayscale(img, channel));
    std::cout << "wrote " << img.width << "x" << img.height << " " << channel
              << " image to " << out_path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Label-free 3d segmentation: synthetic data, pre-segmentation,\n"
                 "range projection, adversarial training and evaluation."};
    app.require_subcommand(1);

    std::string cfg_path, out_path, scan_path, components_path, sidecar_path;
    std::string data_dir, model_path, metrics_path, json_path, image_path;
    std::string preview_path, channel = "range";
    int scans = 20, sources = 20, seeds = 20, coords = 24;
    bool keys = false, fine_tune = false;

    auto* config_cmd = app.add_subcommand("config", "Print the effective configuration");
    config_cmd->add_option("--config", cfg_path, "Configuration file (defaults when absent)");
    config_cmd->add_flag("--keys", keys, "Print the key table with ranges and defaults");

    auto* synth_cmd = app.add_subcommand("synth", "Generate a two-domain synthetic dataset");
    synth_cmd->add_option("--config", cfg_path, "Configuration file (defaults when absent)");
    synth_cmd->add_option("--out", out_path, "Output dataset directory")->required();
    synth_cmd->add_option("--scans", scans, "Number of unlabeled target scans (default 20)");
    synth_cmd->add_option("--sources", sources,
                          "Number of labeled source samples (default 20)");

    auto* preseg_cmd =
        app.add_subcommand("preseg", "Partition a scan into ground and object components");
    preseg_cmd->add_option("--config", cfg_path, "Configuration file (defaults when absent)");
    preseg_cmd->add_option("--scan", scan_path, "Input scan (.bin)")->required();
    preseg_cmd->add_option("--out", out_path, "Output component-id file")->required();
    preseg_cmd->add_option("--sidecar", sidecar_path,
                           "Optional text file with per-component stats");

    auto* project_cmd = app.add_subcommand("project", "Project a scan to a range image");
    project_cmd->add_option("--config", cfg_path, "Configuration file (defaults when absent)");
    project_cmd->add_option("--scan", scan_path, "Input scan (.bin)")->required();
    project_cmd->add_option("--components", components_path,
                            "Optional component-id file to embed");
    project_cmd->add_option("--out", out_path, "Output range-image file")->required();
    project_cmd->add_option("--preview", preview_path,
                            "Optional grayscale preview (portable graymap)");

    auto* train_cmd =
        app.add_subcommand("train", "Run adversarial adaptation on a synth dataset");
    train_cmd->add_option("--config", cfg_path, "Configuration file (defaults when absent)");
    train_cmd->add_option("--data", data_dir, "Dataset directory from `synth`")->required();
    train_cmd->add_option("--out", out_path, "Output checkpoint")->required();
    train_cmd->add_option("--metrics", metrics_path,
                          "Write per-step metrics here instead of stdout");
    train_cmd->add_flag("--fine-tune", fine_tune,
                        "Append the weak-label fine-tuning phase");

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate per-point predictions on a dataset");
    eval_cmd->add_option("--config", cfg_path, "Configuration file (defaults when absent)");
    eval_cmd->add_option("--data", data_dir, "Dataset directory from `synth`")->required();
    eval_cmd->add_option("--model", model_path,
                         "Checkpoint to evaluate (fresh weights when absent)");
    eval_cmd->add_option("--out", out_path, "Write the class-IoU table here instead of stdout");
    eval_cmd->add_option("--json", json_path, "Also write the report as JSON");

    auto* gradcheck_cmd = app.add_subcommand(
        "gradcheck", "Audit every training loss against finite differences");
    gradcheck_cmd->add_option("--config", cfg_path, "Configuration file (defaults when absent)");
    gradcheck_cmd->add_option("--seeds", seeds, "Random fixtures to audit (default 20)");
    gradcheck_cmd->add_option("--coords", coords,
                              "Sampled coordinates per loss per seed (default 24)");

    auto* viz_cmd = app.add_subcommand("viz", "Render a range-image file as grayscale");
    viz_cmd->add_option("--image", image_path, "Range-image file from `project`")->required();
    viz_cmd->add_option("--out", out_path, "Output portable graymap")->required();
    viz_cmd->add_option("--channel", channel, "range (default) or intensity");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (config_cmd->parsed()) cmd_config(cfg_path, keys);
        if (synth_cmd->parsed()) cmd_synth(cfg_path, out_path, scans, sources);
        if (preseg_cmd->parsed()) cmd_preseg(cfg_path, scan_path, out_path, sidecar_path);
        if (project_cmd->parsed())
            cmd_project(cfg_path, scan_path, components_path, out_path, preview_path);
        if (train_cmd->parsed())
            cmd_train(cfg_path, data_dir, out_path, metrics_path, fine_tune);
        if (eval_cmd->parsed()) cmd_eval(cfg_path, data_dir, model_path, out_path, json_path);
        if (gradcheck_cmd->parsed() && !cmd_gradcheck(cfg_path, seeds, coords)) return 2;
        if (viz_cmd->parsed()) cmd_viz(image_path, out_path, channel);
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
