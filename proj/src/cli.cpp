#include "hpd/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "hpd/data_io.hpp"
#include "hpd/gradcheck.hpp"
#include "hpd/image.hpp"
#include "hpd/metrics.hpp"
#include "hpd/net.hpp"
#include "hpd/parallel.hpp"
#include "hpd/reference.hpp"
#include "hpd/train.hpp"

namespace hpd {

namespace {

namespace fs = std::filesystem;

struct NetFlags {
    int depth = 3;
    int base_channels = 16;
    int in_channels = 1;
    int classes = 4;
    int num_hpd = 0;
    std::string downsamplers;  // comma list; overrides num_hpd when nonempty
    std::string fusion = "sum";

    NetConfig to_config() const {
        NetConfig cfg;
        cfg.depth = depth;
        cfg.base_channels = base_channels;
        cfg.in_channels = in_channels;
        cfg.classes = classes;
        cfg.num_hpd = num_hpd;
        cfg.fusion = parse_fusion(fusion);
        if (!downsamplers.empty()) {
            std::size_t p = 0;
            while (p <= downsamplers.size()) {
                std::size_t c = downsamplers.find(',', p);
                if (c == std::string::npos) c = downsamplers.size();
                cfg.downsamplers.push_back(parse_downsampler(downsamplers.substr(p, c - p)));
                p = c + 1;
            }
        }
        cfg.validate();
        return cfg;
    }
};

struct TrainFlags {
    double lr = 0.01;
    double power = 0.9;
    double weight_decay = 1e-4;
    int batch = 8;
    std::int64_t iters = 200;
    std::uint64_t seed = 42;
    double loss_mix = 0.9;
    std::int64_t log_every = 10;
    std::int64_t eval_every = 0;

    TrainConfig to_config() const {
        TrainConfig tc;
        tc.base_lr = lr;
        tc.power = power;
        tc.weight_decay = weight_decay;
        tc.batch_size = batch;
        tc.max_iters = iters;
        tc.seed = seed;
        tc.loss_mix = loss_mix;
        tc.log_every = log_every;
        tc.eval_every = eval_every;
        tc.validate();
        return tc;
    }
};

void add_net_flags(CLI::App* sub, NetFlags& f, bool with_num_hpd = true) {
    sub->add_option("--depth", f.depth, "downsampling stages")->capture_default_str();
    sub->add_option("--base-channels", f.base_channels, "encoder stage-0 width")
        ->capture_default_str();
    sub->add_option("--in-channels", f.in_channels, "input channels")->capture_default_str();
    sub->add_option("--classes", f.classes, "output classes")->capture_default_str();
    if (with_num_hpd) {
        sub->add_option("--num-hpd", f.num_hpd,
                        "first N stages use the hybrid pooling downsampler, rest maxpool")
            ->capture_default_str();
        sub->add_option("--downsamplers", f.downsamplers,
                        "comma list per stage: maxpool|hpd|avgpool|stridedconv "
                        "(overrides --num-hpd)");
    }
    sub->add_option("--fusion", f.fusion, "min/max fusion mode: sum|concat")
        ->capture_default_str();
}

void add_train_flags(CLI::App* sub, TrainFlags& f) {
    sub->add_option("--lr", f.lr, "base learning rate")->capture_default_str();
    sub->add_option("--power", f.power, "poly schedule power")->capture_default_str();
    sub->add_option("--weight-decay", f.weight_decay, "conv weight decay")->capture_default_str();
    sub->add_option("--batch", f.batch, "batch size")->capture_default_str();
    sub->add_option("--iters", f.iters, "training iterations")->capture_default_str();
    sub->add_option("--seed", f.seed, "master seed")->capture_default_str();
    sub->add_option("--loss-mix", f.loss_mix, "lambda: CE weight in the CE/Dice mix")
        ->capture_default_str();
    sub->add_option("--log-every", f.log_every, "metric log cadence")->capture_default_str();
    sub->add_option("--eval-every", f.eval_every, "validation cadence (0 = final only)")
        ->capture_default_str();
}

std::string trim(const std::string& s) {
    const std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

void add_config_flag(CLI::App* sub) {
    sub->add_option("--config",
                    "key = value file supplying flags not given on the command line")
        ->configurable(false);
}

// Path flags stay optional at parse time so a config file can supply them;
// checked here once flag and file values are merged.
void require_flag(const std::string& v, const char* flag) {
    if (v.empty())
        throw ConfigError(std::string("missing required flag ") + flag +
                          " (set it on the command line or in --config)");
}

// CLI11 consults config files only on the top-level app, never on a
// subcommand, so the plain `key = value` format is loaded by hand: each key
// must name a long flag of the subcommand, and file values fill in only the
// flags absent from the command line, so explicit flags always win.
void apply_config_file(CLI::App* sub) {
    const CLI::Option* copt = sub->get_option_no_throw("--config");
    if (copt == nullptr || copt->count() == 0) return;
    const auto path = copt->as<std::string>();
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto where = [&] { return " at " + path + ":" + std::to_string(lineno); };
        if (const std::size_t hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected `key = value`" + where());
        const std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) throw ConfigError("expected `key = value`" + where());
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        if (key == "config") throw ConfigError("config files cannot nest" + where());
        CLI::Option* opt = sub->get_option_no_throw("--" + key);
        if (opt == nullptr) throw ConfigError("unknown config key '" + key + "'" + where());
        if (opt->count() > 0) continue;  // set on the command line; keep that value
        opt->add_result(value);
        opt->run_callback();
    }
}

// Every subcommand that writes artifacts re-emits its effective flag values,
// so a run directory is self-describing.
void echo_config(CLI::App* sub, const std::string& out_dir) {
    const std::string text = sub->config_to_str(true, false);
    std::cout << "effective config:\n" << text;
    if (out_dir.empty()) return;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
    std::ofstream f(fs::path(out_dir) / "effective-config.txt");
    if (!f) throw IoError("cannot write effective-config.txt in " + out_dir);
    f << text;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::size_t p = 0;
    while (p <= s.size()) {
        std::size_t c = s.find(',', p);
        if (c == std::string::npos) c = s.size();
        const std::string tok = s.substr(p, c - p);
        if (tok.empty()) throw ConfigError("empty entry in list '" + s + "'");
        out.push_back(std::stoi(tok));
        p = c + 1;
    }
    return out;
}

// ---------------------------------------------------------------------------

int do_gen_data(const std::string& out, std::uint64_t seed, std::int64_t n_train,
                std::int64_t n_val, int size, int classes, int workers) {
    const std::uint64_t train_seed = derive_seed(seed, fnv1a64("train-split"));
    const std::uint64_t val_seed = derive_seed(seed, fnv1a64("val-split"));
    auto generate = [&](std::uint64_t split_seed, std::int64_t n) {
        std::vector<SegSample> set(static_cast<std::size_t>(n));
        parallel_for(n, [&](std::int64_t i) {
            set[static_cast<std::size_t>(i)] = gen_sample(split_seed, i, size, classes);
        }, workers);
        return set;
    };
    save_dataset((fs::path(out) / "train").string(), generate(train_seed, n_train));
    save_dataset((fs::path(out) / "val").string(), generate(val_seed, n_val));
    std::cout << "wrote " << n_train << " train and " << n_val << " val samples under " << out
              << "\n";
    return 0;
}

int do_train(const NetConfig& net_cfg, const TrainConfig& tc, const std::string& data,
             const std::string& out) {
    const auto train_set = load_dataset((fs::path(data) / "train").string());
    const auto val_set = load_dataset((fs::path(data) / "val").string());
    std::ofstream metrics(fs::path(out) / "metrics.txt");
    if (!metrics) throw IoError("cannot write metrics.txt in " + out);

    struct Tee : std::streambuf {
        // minimal fan-out so metric lines land in the log file and on stdout
        std::streambuf *a, *b;
        Tee(std::streambuf* a_, std::streambuf* b_) : a(a_), b(b_) {}
        int overflow(int ch) override {
            if (ch == EOF) return !EOF;
            const int r1 = a->sputc(static_cast<char>(ch));
            const int r2 = b->sputc(static_cast<char>(ch));
            return r1 == EOF || r2 == EOF ? EOF : ch;
        }
    };
    Tee tee(metrics.rdbuf(), std::cout.rdbuf());
    std::ostream log(&tee);

    auto [net, history] = train(net_cfg, tc, train_set, &val_set, &log);
    const EvalResult ev = evaluate(net, val_set);
    char line[64];
    std::snprintf(line, sizeof line, "final val_mdsc=%.17g", ev.mdsc);
    log << line << "\n";
    save_checkpoint((fs::path(out) / "checkpoint.hpdc").string(), net);
    metrics.flush();
    if (!metrics) throw IoError("metrics.txt write failed in " + out);
    std::cout << "checkpoint written to " << (fs::path(out) / "checkpoint.hpdc").string() << "\n";
    return 0;
}

int do_eval(const std::string& checkpoint, const std::string& data, const std::string& split,
            const std::string& out, std::int64_t overlays) {
    NetParams<float> net = load_checkpoint<float>(checkpoint);
    const auto set = load_dataset((fs::path(data) / split).string());
    const EvalResult ev = evaluate(net, set);

    std::string report;
    char buf[96];
    std::snprintf(buf, sizeof buf, "images=%lld mdsc=%.17g\n",
                  static_cast<long long>(ev.images), ev.mdsc);
    report += buf;
    for (std::size_t c = 0; c < ev.per_class_dsc.size(); ++c) {
        std::snprintf(buf, sizeof buf, "class%zu_dsc=%.17g\n", c, ev.per_class_dsc[c]);
        report += buf;
    }
    std::cout << report;
    if (!out.empty()) {
        std::ofstream f(fs::path(out) / "eval.txt");
        if (!f) throw IoError("cannot write eval.txt in " + out);
        f << report;
    }
    if (overlays > 0) {
        if (out.empty()) throw ConfigError("--overlays needs --out");
        std::error_code ec;
        fs::create_directories(fs::path(out) / "overlays", ec);
        if (ec) throw IoError("cannot create overlays dir: " + ec.message());
        const std::int64_t count = std::min<std::int64_t>(overlays,
                                                          static_cast<std::int64_t>(set.size()));
        for (std::int64_t i = 0; i < count; ++i) {
            const SegSample& s = set[static_cast<std::size_t>(i)];
            auto [logits, cache] = net_forward(s.image, net, false);
            (void)cache;
            const LabelMap pred = argmax_channels(logits);
            emit_overlay(s.image, pred, s.labels,
                         (fs::path(out) / "overlays" / (s.id + ".png")).string());
        }
        std::cout << "wrote " << count << " overlays\n";
    }
    return 0;
}

int do_gradcheck(std::uint64_t seed) {
    const auto results = run_gradcheck_suite(seed);
    bool all_pass = true;
    for (const GradCheckResult& r : results) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "gradcheck %-20s max_rel_err=%.3e tol=%.0e %s",
                      r.name.c_str(), r.max_rel_err, r.tol, r.pass() ? "PASS" : "FAIL");
        std::cout << buf << "\n";
        all_pass = all_pass && r.pass();
    }
    if (!all_pass) throw ValueError("gradient check failed");
    return 0;
}

int do_ablate(NetConfig base_cfg, const TrainConfig& tc, const std::vector<int>& sweep,
              const std::string& data, const std::string& out) {
    const auto train_set = load_dataset((fs::path(data) / "train").string());
    const auto val_set = load_dataset((fs::path(data) / "val").string());
    const auto rows = ablate(base_cfg, tc, sweep, train_set, val_set, &std::cout);
    const std::string tsv = ablate_table_tsv(rows);
    const std::string text = ablate_table_text(rows);
    std::cout << text;
    if (!out.empty()) {
        std::ofstream f1(fs::path(out) / "ablate.tsv");
        std::ofstream f2(fs::path(out) / "ablate.txt");
        if (!f1 || !f2) throw IoError("cannot write ablation tables in " + out);
        f1 << tsv;
        f2 << text;
    }
    return 0;
}

// Times the tuned pooling kernels against the reference oracles and prints
// the params/FLOPs table for the maxpool-vs-hpd net variants.
int do_bench(std::uint64_t seed, int reps) {
    using clock = std::chrono::steady_clock;
    Rng rng(seed);
    const Shape4 shape{8, 32, 64, 64};
    const Tensor4f x = rng_uniform<float>(rng, shape, -1.0f, 1.0f);
    auto time_ms = [&](auto&& fn) {
        fn();  // warm up
        const auto t0 = clock::now();
        for (int r = 0; r < reps; ++r) fn();
        const auto t1 = clock::now();
        return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
    };

    const double opt_max = time_ms([&] { (void)max_pool2d(x, 2); });
    const double ref_max = time_ms([&] { (void)reference::naive_max_pool(x, 2); });
    const double opt_min = time_ms([&] { (void)min_pool2d(x, 2); });
    const double ref_min = time_ms([&] { (void)reference::naive_min_pool(x, 2); });
    const double elems = static_cast<double>(x.size());
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "bench max_pool2d %dx%dx%dx%d k=2: %.3f ms (%.2f GB/s in), naive %.3f ms, speedup %.2fx",
                  (int)shape.n, (int)shape.c, (int)shape.h, (int)shape.w, opt_max,
                  elems * sizeof(float) / (opt_max * 1e6), ref_max, ref_max / opt_max);
    std::cout << buf << "\n";
    std::snprintf(buf, sizeof buf,
                  "bench min_pool2d %dx%dx%dx%d k=2: %.3f ms (%.2f GB/s in), naive %.3f ms, speedup %.2fx",
                  (int)shape.n, (int)shape.c, (int)shape.h, (int)shape.w, opt_min,
                  elems * sizeof(float) / (opt_min * 1e6), ref_min, ref_min / opt_min);
    std::cout << buf << "\n";

    NetConfig cfg;
    const Shape4 probe{1, cfg.in_channels, 64, 64};
    std::cout << "\nnum_hpd      params        flops   params_ratio   flops_ratio\n";
    std::int64_t p0 = 0, f0 = 0;
    for (int n = 0; n <= cfg.depth; ++n) {
        NetConfig c = cfg;
        c.num_hpd = n;
        NetParams<float> net = build_net<float>(c, seed);
        const std::int64_t p = count_params(net);
        const std::int64_t f = count_flops(c, probe);
        if (n == 0) {
            p0 = p;
            f0 = f;
        }
        std::snprintf(buf, sizeof buf, "%7d  %10lld  %11lld  %12.4f  %12.4f", n,
                      static_cast<long long>(p), static_cast<long long>(f),
                      static_cast<double>(p) / static_cast<double>(p0),
                      static_cast<double>(f) / static_cast<double>(f0));
        std::cout << buf << "\n";
    }
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"hybrid pooling downsampling: training, evaluation and analysis tools"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic segmentation dataset");
    std::string gen_out;
    std::uint64_t gen_seed = 42;
    std::int64_t gen_train = 300, gen_val = 50;
    int gen_size = 64, gen_classes = 4, gen_workers = 0;
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_option("--seed", gen_seed, "master seed")->capture_default_str();
    gen->add_option("--train-samples", gen_train, "train split size")->capture_default_str();
    gen->add_option("--val-samples", gen_val, "val split size")->capture_default_str();
    gen->add_option("--size", gen_size, "image side length")->capture_default_str();
    gen->add_option("--classes", gen_classes, "label classes (2-4 distinct regions)")
        ->capture_default_str();
    gen->add_option("--workers", gen_workers, "generator threads (0 = hardware)")
        ->capture_default_str();
    add_config_flag(gen);

    // train
    auto* tr = app.add_subcommand("train", "train a segmentation net");
    NetFlags tr_net;
    TrainFlags tr_tc;
    std::string tr_data, tr_out;
    tr->add_option("--data", tr_data, "dataset directory (with train/ and val/)")->required();
    tr->add_option("--out", tr_out, "run output directory")->required();
    add_net_flags(tr, tr_net);
    add_train_flags(tr, tr_tc);
    add_config_flag(tr);

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ckpt, ev_data, ev_split = "val", ev_out;
    std::int64_t ev_overlays = 0;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--split", ev_split, "dataset split: train|val")->capture_default_str();
    ev->add_option("--out", ev_out, "output directory");
    ev->add_option("--overlays", ev_overlays, "write the first N prediction overlays")
        ->capture_default_str();
    add_config_flag(ev);

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every backward");
    std::uint64_t gc_seed = 1234;
    gc->add_option("--seed", gc_seed, "suite seed")->capture_default_str();
    add_config_flag(gc);

    // bench
    auto* be = app.add_subcommand("bench", "kernel timings and the params/FLOPs table");
    std::uint64_t be_seed = 7;
    int be_reps = 20;
    be->add_option("--seed", be_seed, "input seed")->capture_default_str();
    be->add_option("--reps", be_reps, "timing repetitions")->capture_default_str();
    add_config_flag(be);

    // ablate
    auto* ab = app.add_subcommand("ablate", "sweep the number of hybrid pooling stages");
    NetFlags ab_net;
    TrainFlags ab_tc;
    std::string ab_data, ab_out, ab_sweep = "0,1,2,3";
    ab->add_option("--data", ab_data, "dataset directory (with train/ and val/)")->required();
    ab->add_option("--out", ab_out, "output directory for the tables");
    ab->add_option("--num-hpd", ab_sweep, "comma list of hybrid stage counts to sweep")
        ->capture_default_str();
    add_net_flags(ab, ab_net, false);
    add_train_flags(ab, ab_tc);
    add_config_flag(ab);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        for (CLI::App* sub : app.get_subcommands()) apply_config_file(sub);
        if (*gen) {
            echo_config(gen, gen_out);
            return do_gen_data(gen_out, gen_seed, gen_train, gen_val, gen_size, gen_classes,
                               gen_workers);
        }
        if (*tr) {
            echo_config(tr, tr_out);
            return do_train(tr_net.to_config(), tr_tc.to_config(), tr_data, tr_out);
        }
        if (*ev) {
            echo_config(ev, ev_out);
            return do_eval(ev_ckpt, ev_data, ev_split, ev_out, ev_overlays);
        }
        if (*gc) {
            echo_config(gc, "");
            return do_gradcheck(gc_seed);
        }
        if (*be) {
            echo_config(be, "");
            return do_bench(be_seed, be_reps);
        }
        if (*ab) {
            echo_config(ab, ab_out);
            return do_ablate(ab_net.to_config(), ab_tc.to_config(), parse_int_list(ab_sweep),
                             ab_data, ab_out);
        }
        throw UsageError("no subcommand dispatched");
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::logic_error& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace hpd
