// voxdiff: command-line front end over the library. One run config (JSON)
// plus per-command flags drives toy-data generation, preprocessing, training,
// sampling, refinement, infinite canvases, evaluation, retrieval, and export.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"

#include "voxdiff/checkpoint.hpp"
#include "voxdiff/config.hpp"
#include "voxdiff/dataset.hpp"
#include "voxdiff/errors.hpp"
#include "voxdiff/export.hpp"
#include "voxdiff/metrics.hpp"
#include "voxdiff/pipeline.hpp"
#include "voxdiff/subdivision.hpp"
#include "voxdiff/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace voxdiff;

namespace {

// ---- shared plumbing -------------------------------------------------------

void apply_threads(int threads_flag) {
    int n = threads_flag;
    if (n == 0) {
        if (const char* env = std::getenv("VOXDIFF_THREADS")) {
            char* end = nullptr;
            long v = std::strtol(env, &end, 10);
            if (end == env || *end != '\0' || v < 1)
                throw ConfigError(std::string("VOXDIFF_THREADS is not a positive integer: \"") +
                                  env + "\"");
            n = int(v);
        }
    }
    if (n < 0)
        throw ConfigError("--threads must be at least 1");
#ifdef _OPENMP
    if (n > 0)
        omp_set_num_threads(n);
#endif
}

Dims3 parse_dims_flag(const std::string& text, const std::string& what) {
    Dims3 d;
    char sep1 = 0, sep2 = 0;
    std::istringstream in(text);
    if (!(in >> d.h >> sep1 >> d.w >> sep2 >> d.d) || sep1 != 'x' || sep2 != 'x' ||
        !in.eof())
        throw ConfigError(what + " must look like HxWxD, got \"" + text + "\"");
    return d;
}

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
    std::vector<int> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size())
                throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError(what + " must be a comma-separated integer list, got \"" +
                              text + "\"");
        }
    }
    if (out.empty())
        throw ConfigError(what + " must not be empty");
    return out;
}

std::vector<std::string> list_sgrid_files(const std::string& dir) {
    if (!fs::is_directory(dir))
        throw MissingArtifactError(dir + ": not a directory");
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".sgrid")
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    return files;
}

std::vector<SemanticGrid> load_scene_dir(const std::string& dir, int cap) {
    std::vector<std::string> files = list_sgrid_files(dir);
    if (files.empty())
        throw MissingArtifactError(dir + ": no .sgrid files");
    if (cap > 0 && int(files.size()) > cap)
        files.resize(size_t(cap));
    std::vector<SemanticGrid> scenes;
    scenes.reserve(files.size());
    for (const std::string& f : files)
        scenes.push_back(load_sgrid(f));
    return scenes;
}

struct LoadedModels {
    std::vector<std::unique_ptr<Denoiser>> owned;
    std::vector<Denoiser*> raw;
};

LoadedModels load_pyramid_models(const RunConfig& cfg) {
    if (cfg.paths.models.empty())
        throw ConfigError(cfg.origin + ": paths.models must list one checkpoint per scale");
    LoadedModels m;
    for (const std::string& path : cfg.paths.models) {
        m.owned.push_back(load_model(path));
        m.raw.push_back(m.owned.back().get());
    }
    check_pyramid_models(m.raw, cfg.pyramid.spec);
    return m;
}

GenerateOptions generate_options(const RunConfig& cfg, bool keep_intermediate) {
    GenerateOptions opt;
    opt.start_from_scale = cfg.pyramid.start_from_scale;
    opt.deterministic = cfg.pyramid.deterministic;
    opt.keep_intermediate = cfg.pyramid.keep_intermediate || keep_intermediate;
    opt.saf_mode = cfg.pyramid.saf_mode;
    return opt;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw ConfigError(dir + ": cannot create directory (" + ec.message() + ")");
}

std::string scene_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04d.sgrid", index);
    return buf;
}

void save_intermediates(const GenerateResult& res, const std::string& dir) {
    ensure_dir(dir);
    for (size_t i = 0; i < res.per_scale.size(); ++i)
        save_sgrid((fs::path(dir) / ("scale" + std::to_string(i) + ".sgrid")).string(),
                   res.per_scale[i]);
}

// Distinct weight-init draws per scale: the network keys its kWeights stream
// only by parameter index, so each scale gets its own splitmix-style seed.
VoxelRng weight_rng(uint64_t seed, int scale) {
    return VoxelRng{seed ^ (0x9e3779b97f4a7c15ull * uint64_t(scale + 1))};
}

// ---- commands --------------------------------------------------------------

struct MakeToyArgs {
    std::string out;
    int count = 8;
    std::string dims;
    double ground = -1, road = -1, building = -1, vehicle = -1, pole = -1;
};

int run_make_toy(const RunConfig& cfg, const MakeToyArgs& a) {
    ToySceneConfig toy;
    toy.seed = cfg.seed;
    if (!a.dims.empty())
        toy.dims = parse_dims_flag(a.dims, "--dims");
    if (a.ground >= 0) toy.ground_density = a.ground;
    if (a.road >= 0) toy.road_density = a.road;
    if (a.building >= 0) toy.building_density = a.building;
    if (a.vehicle >= 0) toy.vehicle_density = a.vehicle;
    if (a.pole >= 0) toy.pole_density = a.pole;

    std::vector<std::string> warnings;
    std::vector<SemanticGrid> scenes = generate_toy_scenes(toy, a.count, &warnings);
    ensure_dir(a.out);
    for (size_t i = 0; i < scenes.size(); ++i)
        save_sgrid((fs::path(a.out) / scene_name(int(i))).string(), scenes[i]);
    for (const std::string& w : warnings)
        std::cerr << "voxdiff: make-toy: " << w << '\n';
    std::cout << "wrote " << scenes.size() << " toy scenes (" << to_string(toy.dims) << ", K="
              << kToyClasses << ") to " << a.out << '\n';
    return 0;
}

struct PreprocessArgs {
    std::string in, out, preset;
    int keep_layers = 0;
    std::string raw_dims;
    int raw_classes = 0;
};

int run_preprocess(const RunConfig&, const PreprocessArgs& a) {
    const RemapPreset& preset = remap_preset(a.preset);
    if (!fs::is_directory(a.in))
        throw MissingArtifactError(a.in + ": not a directory");
    std::vector<fs::path> inputs;
    for (const auto& entry : fs::directory_iterator(a.in)) {
        if (!entry.is_regular_file())
            continue;
        std::string ext = entry.path().extension().string();
        if (ext == ".sgrid" || ext == ".raw")
            inputs.push_back(entry.path());
    }
    std::sort(inputs.begin(), inputs.end());
    if (inputs.empty())
        throw MissingArtifactError(a.in + ": no .sgrid or .raw volumes");

    ensure_dir(a.out);
    int done = 0;
    for (const fs::path& path : inputs) {
        SemanticGrid g;
        if (path.extension() == ".sgrid") {
            g = load_sgrid(path.string());
        } else {
            if (a.raw_dims.empty() || a.raw_classes < 2)
                throw ConfigError(path.string() +
                                  ": raw volumes need --raw-dims HxWxD and --raw-classes K");
            g = import_raw(path.string(), parse_dims_flag(a.raw_dims, "--raw-dims"),
                           a.raw_classes);
        }
        g = remap(g, preset.remap);
        if (a.keep_layers > 0)
            g = height_crop(g, a.keep_layers);
        save_sgrid((fs::path(a.out) / path.stem()).string() + ".sgrid", g);
        ++done;
    }
    std::cout << "preprocessed " << done << " scenes with preset " << preset.name << " (v"
              << preset.version << ") to " << a.out << '\n';
    return 0;
}

struct TrainArgs {
    std::string data, out;
    std::string scales;          // comma list; empty = all
    bool finetune = false;       // warm-start from paths.models, freeze the rest
    bool overlap_conditioning = false; // finer scales take 2K condition channels
    int base_channels = 16, depth = 2, time_embed = 32;
    int epochs = -1, batch_size = -1;
    double lr = -1, lambda = -1;
};

int run_train(const RunConfig& cfg_in, const TrainArgs& a) {
    RunConfig cfg = cfg_in;
    if (a.epochs >= 0) cfg.train.epochs = a.epochs;
    if (a.batch_size >= 0) cfg.train.batch_size = a.batch_size;
    if (a.lr >= 0) cfg.train.learning_rate = a.lr;
    if (a.lambda >= 0) cfg.train.lambda_aux = a.lambda;
    validate_run_config(cfg);

    std::string data = a.data.empty() ? cfg.paths.data : a.data;
    std::string out = a.out.empty() ? cfg.paths.out : a.out;
    if (data.empty())
        throw ConfigError(cfg.origin + ": train needs --data or paths.data");
    if (out.empty())
        throw ConfigError(cfg.origin + ": train needs --out or paths.out");

    std::vector<SemanticGrid> scenes = load_scene_dir(data, 0);
    int K = scenes[0].num_classes;
    const PyramidSpec& pyramid = cfg.pyramid.spec;
    NoiseSchedule schedule = make_schedule(cfg.schedule);
    cfg.train.diagnostics_dir = out;

    std::vector<int> train_scales;
    if (a.scales.empty())
        for (int s = 0; s < pyramid.levels(); ++s) train_scales.push_back(s);
    else
        train_scales = parse_int_list(a.scales, "--scales");

    ensure_dir(out);
    auto model_path = [&](int s) {
        return (fs::path(out) / ("model_scale" + std::to_string(s) + ".vdck")).string();
    };
    auto curve_path = [&](int s) {
        return (fs::path(out) / ("loss_scale" + std::to_string(s) + ".csv")).string();
    };
    auto report = [&](int s, const TrainResult& r) {
        if (r.epochs.empty())
            return;
        const LossBreakdown& last = r.epochs.back();
        std::cout << "scale " << s << ": " << r.epochs.size() << " epoch(s), final total="
                  << last.total << " kl=" << last.kl << " aux=" << last.aux << '\n';
        write_loss_csv(curve_path(s), r);
    };

    if (a.finetune) {
        FinetunePlan plan;
        plan.source_checkpoints = cfg.paths.models;
        plan.train_scales = train_scales;
        FinetuneResult res =
            finetune(plan, scenes, pyramid, schedule, cfg.train, VoxelRng{cfg.seed});
        for (int s = 0; s < pyramid.levels(); ++s) {
            auto* net = dynamic_cast<UNetDenoiser*>(res.models[size_t(s)].get());
            if (!net)
                throw ConfigError(plan.source_checkpoints[size_t(s)] +
                                  ": only network checkpoints can be written back");
            save_model(model_path(s), net->model());
            report(s, res.curves[size_t(s)]);
        }
        std::cout << "fine-tuned " << train_scales.size() << " of " << pyramid.levels()
                  << " scales to " << out << '\n';
        return 0;
    }

    UNetConfig ucfg;
    ucfg.base_channels = a.base_channels;
    ucfg.depth = a.depth;
    ucfg.time_embed_dim = a.time_embed;
    for (int s : train_scales) {
        if (s < 0 || s >= pyramid.levels())
            throw ConfigError("--scales names scale " + std::to_string(s) + " but the pyramid has " +
                              std::to_string(pyramid.levels()) + " level(s)");
        int cc = s == 0 ? 0 : (a.overlap_conditioning ? 2 * K : K);
        UNetDenoiser model(UNet(ucfg, K, cc, weight_rng(cfg.seed, s)));
        TrainResult r =
            train_scale(model, s, scenes, pyramid, schedule, cfg.train, VoxelRng{cfg.seed});
        save_model(model_path(s), model.model());
        report(s, r);
    }
    std::cout << "trained " << train_scales.size() << " scale(s) on " << scenes.size()
              << " scenes to " << out << '\n';
    return 0;
}

struct SampleArgs {
    std::string out;
    std::string intermediates;
    bool tiled = false;
};

int run_sample(const RunConfig& cfg, const SampleArgs& a) {
    LoadedModels models = load_pyramid_models(cfg);
    NoiseSchedule schedule = make_schedule(cfg.schedule);
    GenerateOptions opt = generate_options(cfg, !a.intermediates.empty());
    VoxelRng rng{cfg.seed};

    GenerateResult res;
    if (a.tiled)
        res = generate_tiled(models.raw, cfg.pyramid.spec, schedule, cfg.layout.rows,
                             cfg.layout.cols, cfg.layout.overlap, opt, rng);
    else
        res = generate(models.raw, cfg.pyramid.spec, schedule, opt, rng);

    save_sgrid(a.out, res.scene);
    if (!a.intermediates.empty())
        save_intermediates(res, a.intermediates);
    std::cout << "sampled " << to_string(res.scene.dims) << " scene (seed " << cfg.seed
              << ") -> " << a.out << '\n';
    return 0;
}

struct RefineArgs {
    std::string coarse, out;
    std::string intermediates;
};

int run_refine(const RunConfig& cfg, const RefineArgs& a) {
    SemanticGrid coarse = load_sgrid(a.coarse);
    const std::vector<Dims3>& scales = cfg.pyramid.spec.scales;
    int at = -1;
    for (size_t i = 0; i < scales.size(); ++i)
        if (scales[i] == coarse.dims)
            at = int(i);
    if (at < 0)
        throw ConfigError(a.coarse + ": dims " + to_string(coarse.dims) +
                          " match no pyramid scale in " + cfg.origin);
    if (at + 1 == int(scales.size()))
        throw ConfigError(a.coarse + ": already at the finest scale, nothing to refine");

    LoadedModels models = load_pyramid_models(cfg);
    NoiseSchedule schedule = make_schedule(cfg.schedule);
    GenerateOptions opt = generate_options(cfg, !a.intermediates.empty());
    opt.start_from_scale = at + 1;
    opt.coarse = &coarse;

    GenerateResult res = generate(models.raw, cfg.pyramid.spec, schedule, opt, VoxelRng{cfg.seed});
    save_sgrid(a.out, res.scene);
    if (!a.intermediates.empty())
        save_intermediates(res, a.intermediates);
    std::cout << "refined " << to_string(coarse.dims) << " -> " << to_string(res.scene.dims)
              << " -> " << a.out << '\n';
    return 0;
}

struct InfiniteArgs {
    std::string out;
    int rows = 2, cols = 2;
};

int run_infinite(const RunConfig& cfg, const InfiniteArgs& a) {
    LoadedModels models = load_pyramid_models(cfg);
    NoiseSchedule schedule = make_schedule(cfg.schedule);

    InfiniteOptions opt;
    opt.rows = a.rows;
    opt.cols = a.cols;
    opt.strip_overlap = cfg.layout.overlap;
    opt.sub_rows = cfg.layout.rows;
    opt.sub_cols = cfg.layout.cols;
    opt.sub_overlap = cfg.layout.overlap;
    opt.deterministic = cfg.pyramid.deterministic;
    opt.saf_mode = cfg.pyramid.saf_mode;

    SemanticGrid canvas =
        generate_infinite(models.raw, cfg.pyramid.spec, schedule, opt, VoxelRng{cfg.seed});
    save_sgrid(a.out, canvas);
    std::cout << "generated " << a.rows << "x" << a.cols << " scene canvas "
              << to_string(canvas.dims) << " -> " << a.out << '\n';
    return 0;
}

struct EvalArgs {
    std::string gen, ref, out;
    int samples = -1;
};

int run_eval(const RunConfig& cfg, const EvalArgs& a) {
    int cap = a.samples > 0 ? a.samples : cfg.eval.sample_count;
    std::vector<SemanticGrid> gen = load_scene_dir(a.gen, cap);
    std::vector<SemanticGrid> ref = load_scene_dir(a.ref, cap);
    int ignore = cfg.eval.ignore_index;

    auto features = [&](const std::vector<SemanticGrid>& grids) {
        return extract_all(grids,
                           [&](const SemanticGrid& g) { return extract_features(g, ignore); });
    };
    std::vector<FeatureVector> gen_f = features(gen);
    std::vector<FeatureVector> ref_f = features(ref);

    double f3d = frechet_distance(gaussian_stats(gen_f), gaussian_stats(ref_f));
    double mmd = mmd2(gen_f, ref_f, cfg.eval.mmd_bandwidth);

    // Segmentation scores compare like for like: the i-th generated scene is
    // scored against the i-th reference scene (both directories sorted by
    // name), so the two sets must pair up.
    if (gen.size() != ref.size())
        throw ConfigError("eval: --gen has " + std::to_string(gen.size()) + " scenes but --ref has " +
                          std::to_string(ref.size()) + "; segmentation scores need pairs");
    SegmentationReport seg = segmentation_metrics(ref, gen, ignore);
    RetrievalReport retrieval = retrieve_nearest(gen, ref);

    json report;
    report["f3d"] = f3d;
    report["mmd2"] = mmd;
    report["miou"] = seg.miou;
    report["ma"] = seg.ma;
    report["per_class_iou"] = seg.per_class_iou;
    report["ssim_percentiles"] = {{"p10", retrieval.p10},
                                  {"p50", retrieval.p50},
                                  {"p90", retrieval.p90}};

    std::string text = report.dump(2);
    std::cout << text << '\n';
    if (!a.out.empty()) {
        std::ofstream file(a.out);
        if (!file)
            throw ConfigError(a.out + ": cannot create report file");
        file << text << '\n';
    }
    return 0;
}

struct RetrieveArgs {
    std::string query, corpus, out;
};

int run_retrieve(const RunConfig&, const RetrieveArgs& a) {
    std::vector<std::string> query_files;
    if (fs::is_directory(a.query))
        query_files = list_sgrid_files(a.query);
    else if (fs::is_regular_file(a.query))
        query_files.push_back(a.query);
    if (query_files.empty())
        throw MissingArtifactError(a.query + ": no query scenes");

    std::vector<std::string> corpus_files = list_sgrid_files(a.corpus);
    if (corpus_files.empty())
        throw MissingArtifactError(a.corpus + ": no .sgrid files");

    std::vector<SemanticGrid> queries, corpus;
    for (const std::string& f : query_files) queries.push_back(load_sgrid(f));
    for (const std::string& f : corpus_files) corpus.push_back(load_sgrid(f));

    RetrievalReport rep = retrieve_nearest(queries, corpus);
    json out;
    out["matches"] = json::array();
    for (size_t i = 0; i < rep.matches.size(); ++i) {
        const RetrievalMatch& m = rep.matches[i];
        std::cout << query_files[i] << " -> " << corpus_files[size_t(m.index)]
                  << " ssim=" << m.ssim << '\n';
        out["matches"].push_back({{"query", query_files[i]},
                                  {"match", corpus_files[size_t(m.index)]},
                                  {"ssim", m.ssim}});
    }
    std::cout << "p10=" << rep.p10 << " p50=" << rep.p50 << " p90=" << rep.p90 << '\n';
    out["p10"] = rep.p10;
    out["p50"] = rep.p50;
    out["p90"] = rep.p90;
    if (!a.out.empty()) {
        std::ofstream file(a.out);
        if (!file)
            throw ConfigError(a.out + ": cannot create report file");
        file << out.dump(2) << '\n';
    }
    return 0;
}

struct ExportArgs {
    std::string in, out;
};

int run_export(const RunConfig&, const ExportArgs& a) {
    SemanticGrid g = load_sgrid(a.in);
    std::string ply = a.out + ".ply";
    export_ply(ply, g);
    std::vector<std::string> csvs = export_slice_csv(a.out, g);
    std::cout << ply << ": " << occupied_voxels(g) << " vertices; " << csvs.size()
              << " slice CSVs at " << a.out << "_z*.csv" << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"pyramid discrete diffusion over semantic voxel grids"};
    app.require_subcommand(1);

    std::string config_path;
    int threads = 0;
    uint64_t seed = 0;
    bool deterministic = false;
    app.add_option("--config", config_path, "run config JSON file (docs/config.md)");
    app.add_option("--threads", threads,
                   "parallelism cap; 1 guarantees bit-determinism (env VOXDIFF_THREADS)");
    auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
    auto* det_flag =
        app.add_flag("--deterministic", deterministic, "argmax instead of sampled transitions");

    MakeToyArgs toy;
    CLI::App* c_toy = app.add_subcommand("make-toy", "generate procedural toy scenes");
    c_toy->add_option("--out", toy.out, "output directory")->required();
    c_toy->add_option("--count", toy.count, "number of scenes");
    c_toy->add_option("--dims", toy.dims, "scene dims HxWxD");
    c_toy->add_option("--ground", toy.ground, "ground density");
    c_toy->add_option("--road", toy.road, "road density");
    c_toy->add_option("--building", toy.building, "building density");
    c_toy->add_option("--vehicle", toy.vehicle, "vehicle density");
    c_toy->add_option("--pole", toy.pole, "pole density");

    PreprocessArgs pre;
    CLI::App* c_pre = app.add_subcommand("preprocess", "remap + crop raw volumes to .sgrid");
    c_pre->add_option("--in", pre.in, "input directory (.sgrid or .raw)")->required();
    c_pre->add_option("--out", pre.out, "output directory")->required();
    c_pre->add_option("--preset", pre.preset, "remap preset (carla-merge | kitti-to-carla)")
        ->required();
    c_pre->add_option("--keep-layers", pre.keep_layers, "height-crop to the bottom N layers");
    c_pre->add_option("--raw-dims", pre.raw_dims, "dims HxWxD of .raw volumes");
    c_pre->add_option("--raw-classes", pre.raw_classes, "class count of .raw volumes");

    TrainArgs tr;
    CLI::App* c_train = app.add_subcommand("train", "train one denoiser per pyramid scale");
    c_train->add_option("--data", tr.data, "scene directory (default: paths.data)");
    c_train->add_option("--out", tr.out, "checkpoint directory (default: paths.out)");
    c_train->add_option("--scales", tr.scales, "comma list of scales to train (default: all)");
    c_train->add_flag("--finetune", tr.finetune,
                      "warm-start every scale from paths.models; scales outside --scales stay frozen");
    c_train->add_flag("--overlap-conditioning", tr.overlap_conditioning,
                      "finer scales take 2K condition channels for tiled/infinite use");
    c_train->add_option("--base-channels", tr.base_channels, "network width");
    c_train->add_option("--depth", tr.depth, "downsampling levels");
    c_train->add_option("--time-embed", tr.time_embed, "time embedding size");
    c_train->add_option("--epochs", tr.epochs, "override train.epochs");
    c_train->add_option("--batch-size", tr.batch_size, "override train.batch_size");
    c_train->add_option("--lr", tr.lr, "override train.learning_rate");
    c_train->add_option("--lambda", tr.lambda, "override train.lambda");

    SampleArgs sa;
    CLI::App* c_sample = app.add_subcommand("sample", "unconditional coarse-to-fine generation");
    c_sample->add_option("--out", sa.out, "output .sgrid path")->required();
    c_sample->add_option("--intermediates", sa.intermediates, "directory for per-scale outputs");
    c_sample->add_flag("--tiled", sa.tiled, "route the finest scale through subdivision");

    RefineArgs re;
    CLI::App* c_refine = app.add_subcommand("refine", "generate finer scales from a coarse scene");
    c_refine->add_option("--coarse", re.coarse, "coarse scene .sgrid")->required();
    c_refine->add_option("--out", re.out, "output .sgrid path")->required();
    c_refine->add_option("--intermediates", re.intermediates, "directory for per-scale outputs");

    InfiniteArgs inf;
    CLI::App* c_inf = app.add_subcommand("infinite", "seamless multi-tile canvas");
    c_inf->add_option("--out", inf.out, "output .sgrid path")->required();
    c_inf->add_option("--rows", inf.rows, "scene tiles down the canvas");
    c_inf->add_option("--cols", inf.cols, "scene tiles across the canvas");

    EvalArgs ev;
    CLI::App* c_eval = app.add_subcommand("eval", "score generated scenes against references");
    c_eval->add_option("--gen", ev.gen, "generated scene directory")->required();
    c_eval->add_option("--ref", ev.ref, "reference scene directory")->required();
    c_eval->add_option("--out", ev.out, "also write the JSON report here");
    c_eval->add_option("--samples", ev.samples, "cap scenes per side (default eval.sample_count)");

    RetrieveArgs rt;
    CLI::App* c_ret = app.add_subcommand("retrieve", "best-SSIM corpus match per query");
    c_ret->add_option("--query", rt.query, "query .sgrid file or directory")->required();
    c_ret->add_option("--corpus", rt.corpus, "corpus directory")->required();
    c_ret->add_option("--out", rt.out, "also write the JSON report here");

    ExportArgs ex;
    CLI::App* c_export = app.add_subcommand("export", "write BASE.ply and BASE_z*.csv");
    c_export->add_option("--in", ex.in, "input .sgrid")->required();
    c_export->add_option("--out", ex.out, "output base path (no extension)")->required();

    // Global flags (--seed, --config, --threads, ...) are accepted after the
    // subcommand name too.
    for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; }))
        sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        apply_threads(threads);
        RunConfig cfg;
        if (!config_path.empty())
            cfg = load_run_config(config_path);
        if (seed_opt->count())
            cfg.seed = seed;
        if (det_flag->count())
            cfg.pyramid.deterministic = true;
        validate_run_config(cfg);

        if (*c_toy) return run_make_toy(cfg, toy);
        if (*c_pre) return run_preprocess(cfg, pre);
        if (*c_train) return run_train(cfg, tr);
        if (*c_sample) return run_sample(cfg, sa);
        if (*c_refine) return run_refine(cfg, re);
        if (*c_inf) return run_infinite(cfg, inf);
        if (*c_eval) return run_eval(cfg, ev);
        if (*c_ret) return run_retrieve(cfg, rt);
        if (*c_export) return run_export(cfg, ex);
    } catch (const Error& e) {
        std::cerr << "voxdiff: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "voxdiff: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
