#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "t1cl/config.hpp"
#include "t1cl/layer.hpp"
#include "t1cl/metrics.hpp"
#include "t1cl/network.hpp"
#include "t1cl/tn_kernel.hpp"
#include "t1cl/train.hpp"

namespace {

using namespace t1cl;

constexpr std::size_t kImgChannels = 3;

double rel_err(double got, double want) {
    return std::abs(got - want) / std::max(1.0, std::abs(want));
}

std::ofstream open_csv(const std::string& path) {
    const std::filesystem::path parent = std::filesystem::path(path).parent_path();
    std::error_code ec;
    if (!parent.empty()) std::filesystem::create_directories(parent, ec);
    if (ec) throw io_error("cannot create directory " + parent.string() + ": " + ec.message());
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path);
    out << std::setprecision(17);
    return out;
}

std::vector<std::size_t> sweep_ranks(KernelFormat format, std::size_t order, bool shared,
                                     Rng& rng) {
    std::size_t len = 1;
    if (format == KernelFormat::TT) len = order - 1;
    if (format == KernelFormat::TR) len = order;
    std::vector<std::size_t> ranks(len);
    if (shared) {
        const std::size_t r = 1 + rng.next_u64() % 3;
        for (std::size_t& v : ranks) v = r;
    } else {
        for (std::size_t& v : ranks) v = 1 + rng.next_u64() % 3;
    }
    return ranks;
}

// ---------------------------------------------------------------------------
// oracle: factorized contraction vs the dense kernel, swept over every format.

int run_oracle(const RunConfig& cfg, bool corrupt) {
    constexpr double kTol = 1e-9;
    constexpr std::size_t kInstances = 100;
    std::ofstream csv = open_csv(cfg.oracle_csv);
    csv << "format,order,shared,instances,max_rel_err\n";
    Rng master(cfg.seed);
    double worst = 0.0;
    bool first = true;
    for (KernelFormat fmt : {KernelFormat::CP, KernelFormat::TT, KernelFormat::TR}) {
        for (std::size_t p = 1; p <= 4; ++p) {
            for (bool shared : {false, true}) {
                Rng rng = master.split();
                double combo_worst = 0.0;
                for (std::size_t n = 0; n < kInstances; ++n) {
                    const std::size_t in_dim = 2 + rng.next_u64() % 5;
                    const std::size_t out_dim = 1 + rng.next_u64() % 4;
                    TnKernel k = init_kernel(fmt, p, in_dim, out_dim,
                                             sweep_ranks(fmt, p, shared, rng), shared, rng);
                    const DenseTensor x = rng_uniform(rng, {in_dim}, -1.0, 1.0);
                    const DenseTensor got = contract(k, x);
                    if (corrupt && first && n == 0) k.cores[0].data[0] += 1e-3;
                    const DenseTensor want = contract_last(reconstruct_dense(k), x, p);
                    for (std::size_t j = 0; j < out_dim; ++j)
                        combo_worst = std::max(combo_worst, rel_err(got.data[j], want.data[j]));
                }
                csv << format_name(fmt) << ',' << p << ',' << (shared ? 1 : 0) << ','
                    << kInstances << ',' << combo_worst << '\n';
                worst = std::max(worst, combo_worst);
                first = false;
            }
        }
    }
    const bool ok = worst <= kTol;
    std::cout << "oracle: 24 combos x " << kInstances << " instances, max_rel_err=" << worst
              << " tol=" << kTol << " -> " << (ok ? "ok" : "FAIL") << " (" << cfg.oracle_csv
              << ")\n";
    return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// gradcheck: analytic gradients vs central finite differences.

double dot_loss(const FeatureMap& a, const FeatureMap& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.data.size(); ++i) s += a.data.data[i] * b.data.data[i];
    return s;
}

double min_abs(const std::vector<double>& v) {
    double m = 1e300;
    for (double x : v) m = std::min(m, std::abs(x));
    return m;
}

FeatureMap random_map(std::size_t h, std::size_t w, std::size_t c, Rng& rng, double lo,
                      double hi) {
    FeatureMap m = FeatureMap::zeros(h, w, c);
    for (double& v : m.data.data) v = rng.uniform(lo, hi);
    return m;
}

// Max relative error between analytic kernel-gradient and FD over every core
// entry plus the input vector.
double contract_grad_fd_err(Rng& rng, KernelFormat fmt, std::size_t p, bool shared) {
    const std::size_t in_dim = 2 + rng.next_u64() % 4;
    const std::size_t out_dim = 1 + rng.next_u64() % 3;
    TnKernel k =
        init_kernel(fmt, p, in_dim, out_dim, sweep_ranks(fmt, p, shared, rng), shared, rng);
    DenseTensor x = rng_uniform(rng, {in_dim}, -1.0, 1.0);
    const DenseTensor up = rng_uniform(rng, {out_dim}, -1.0, 1.0);
    const KernelGrad grads = contract_grad(k, x, up);
    const auto loss = [&] {
        const DenseTensor y = contract(k, x);
        double s = 0.0;
        for (std::size_t j = 0; j < out_dim; ++j) s += y.data[j] * up.data[j];
        return s;
    };
    const double h = 1e-5;
    double worst = 0.0;
    const auto probe = [&](double& slot, double analytic) {
        const double keep = slot;
        slot = keep + h;
        const double hi = loss();
        slot = keep - h;
        const double lo = loss();
        slot = keep;
        worst = std::max(worst, rel_err(analytic, (hi - lo) / (2.0 * h)));
    };
    for (std::size_t c = 0; c < k.cores.size(); ++c)
        for (std::size_t i = 0; i < k.cores[c].data.size(); ++i)
            probe(k.cores[c].data[i], grads.cores[c].data[i]);
    for (std::size_t i = 0; i < in_dim; ++i) probe(x.data[i], grads.x.data[i]);
    return worst;
}

// Max relative error of layer_backward vs FD.  Instances whose pre-activations
// sit within 1e-3 of the LeakyRelu kink are re-rolled: central differences
// straddle the kink there and measure neither one-sided slope.
double layer_fd_err(Rng& rng, KernelFormat fmt, std::size_t p, bool shared) {
    const std::size_t height = 2, width = 3;
    T1clLayer layer;
    FeatureMap in;
    LayerCache cache;
    for (int attempt = 0; attempt < 200; ++attempt) {
        const std::size_t channels = 2 + rng.next_u64() % 3;
        layer.add_one = (rng.next_u64() % 2) == 0;
        layer.activation = Activation::LeakyRelu;
        const std::size_t in_dim = channels + (layer.add_one ? 1 : 0);
        layer.kernel = init_kernel(fmt, p, in_dim, 1 + rng.next_u64() % 3,
                                   sweep_ranks(fmt, p, shared, rng), shared, rng);
        in = random_map(height, width, channels, rng, -1.0, 1.0);
        layer_forward(layer, in, cache);
        if (min_abs(cache.pre) > 1e-3) break;
    }
    const FeatureMap up =
        random_map(height, width, layer.kernel.out_dim, rng, -1.0, 1.0);
    const LayerGrads grads = layer_backward(layer, cache, up);
    const auto loss = [&] {
        LayerCache scratch;
        return dot_loss(layer_forward(layer, in, scratch), up);
    };
    const double h = 1e-5;
    double worst = 0.0;
    const auto probe = [&](double& slot, double analytic) {
        const double keep = slot;
        slot = keep + h;
        const double hi = loss();
        slot = keep - h;
        const double lo = loss();
        slot = keep;
        worst = std::max(worst, rel_err(analytic, (hi - lo) / (2.0 * h)));
    };
    for (std::size_t c = 0; c < layer.kernel.cores.size(); ++c)
        for (std::size_t i = 0; i < layer.kernel.cores[c].data.size(); ++i)
            probe(layer.kernel.cores[c].data[i], grads.cores[c].data[i]);
    for (std::size_t i = 0; i < in.data.data.size(); ++i)
        probe(in.data.data[i], grads.input.data.data[i]);
    return worst;
}

// Max relative error of net_backward vs FD on a 2-block net.  The head is
// re-randomized because the zero-initialized head would null every body
// gradient; kink-adjacent instances are re-rolled as above.
double net_fd_err(Rng& rng) {
    FusionSetup fusion;
    fusion.order = 2;
    fusion.rank = 2;
    MicroOwanNet net;
    FeatureMap in;
    NetCache cache;
    for (int attempt = 0; attempt < 200; ++attempt) {
        Rng net_rng = rng.split();
        net = make_net(2, 4, 2, 4, fusion, true, true, net_rng);
        for (double& v : net.head.data) v = rng.uniform(-0.3, 0.3);
        in = random_map(5, 5, 2, rng, 0.0, 1.0);
        net_forward(net, in, cache);
        double margin = 1e300;
        for (const BlockCache& b : cache.blocks) margin = std::min(margin, min_abs(b.fusion.pre));
        if (margin > 1e-3) break;
    }
    const FeatureMap up = random_map(5, 5, 2, rng, -1.0, 1.0);
    NetGrads grads = net_backward(net, cache, up);
    const std::vector<DenseTensor*> params = net_parameters(net);
    const std::vector<DenseTensor*> grad_ts = grad_tensors(grads);
    const auto loss = [&] {
        NetCache scratch;
        return dot_loss(net_forward(net, in, scratch), up);
    };
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < params[t]->data.size(); ++i) {
            double& slot = params[t]->data[i];
            const double keep = slot;
            slot = keep + h;
            const double hi = loss();
            slot = keep - h;
            const double lo = loss();
            slot = keep;
            worst = std::max(worst, rel_err(grad_ts[t]->data[i], (hi - lo) / (2.0 * h)));
        }
    }
    return worst;
}

int run_gradcheck(const RunConfig& cfg, bool corrupt) {
    constexpr double kLayerTol = 1e-6;
    constexpr double kNetTol = 1e-5;
    constexpr std::size_t kInstances = 50;
    std::ofstream csv = open_csv(cfg.gradcheck_csv);
    csv << "scope,instance,max_rel_err,tol\n";
    Rng master(cfg.seed);
    bool ok = true;
    const KernelFormat fmts[] = {KernelFormat::CP, KernelFormat::TT, KernelFormat::TR};
    double worst_contract = 0.0, worst_layer = 0.0, worst_net = 0.0;
    for (std::size_t n = 0; n < kInstances; ++n) {
        Rng rng = master.split();
        const KernelFormat fmt = fmts[n % 3];
        const std::size_t p = 1 + n % 4;
        const bool shared = (n / 3) % 2 == 0;
        double err = contract_grad_fd_err(rng, fmt, p, shared);
        if (corrupt && n == 0) err += 1e-2;
        csv << "contract," << n << ',' << err << ',' << kLayerTol << '\n';
        worst_contract = std::max(worst_contract, err);
        ok = ok && err <= kLayerTol;
    }
    for (std::size_t n = 0; n < kInstances; ++n) {
        Rng rng = master.split();
        const double err = layer_fd_err(rng, fmts[n % 3], 1 + n % 4, (n / 3) % 2 == 0);
        csv << "layer," << n << ',' << err << ',' << kLayerTol << '\n';
        worst_layer = std::max(worst_layer, err);
        ok = ok && err <= kLayerTol;
    }
    for (std::size_t n = 0; n < 3; ++n) {
        Rng rng = master.split();
        const double err = net_fd_err(rng);
        csv << "net," << n << ',' << err << ',' << kNetTol << '\n';
        worst_net = std::max(worst_net, err);
        ok = ok && err <= kNetTol;
    }
    std::cout << "gradcheck: contract max=" << worst_contract << " layer max=" << worst_layer
              << " net max=" << worst_net << " -> " << (ok ? "ok" : "FAIL") << " ("
              << cfg.gradcheck_csv << ")\n";
    return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// bench: parameter and multiplication counts with wall times.

std::uint64_t time_ns(std::uint64_t reps, const std::function<void()>& body) {
    const auto start = std::chrono::steady_clock::now();
    for (std::uint64_t r = 0; r < reps; ++r) body();
    const auto stop = std::chrono::steady_clock::now();
    const auto total =
        std::chrono::duration_cast<std::chrono::nanoseconds>(stop - start).count();
    return static_cast<std::uint64_t>(total) / std::max<std::uint64_t>(1, reps);
}

int run_bench(const RunConfig& cfg) {
    std::ofstream csv = open_csv(cfg.bench_csv);
    csv << "format,order,shared,in_dim,rank,out_dim,param_count,flop_count,dense_flops,"
           "dense_feasible,wall_ns,dense_wall_ns\n";
    Rng master(cfg.seed);
    const std::size_t out_dim = 4;
    for (KernelFormat fmt : {KernelFormat::CP, KernelFormat::TT, KernelFormat::TR}) {
        for (std::size_t p = 1; p <= 4; ++p) {
            for (bool shared : {false, true}) {
                for (std::size_t in_dim : {std::size_t(4), std::size_t(16)}) {
                    for (std::size_t rank : {std::size_t(2), std::size_t(8)}) {
                        Rng rng = master.split();
                        const TnKernel k = init_kernel(fmt, p, in_dim, out_dim,
                                                       uniform_rank_list(fmt, p, rank),
                                                       shared, rng);
                        const DenseTensor x = rng_uniform(rng, {in_dim}, -1.0, 1.0);
                        const std::uint64_t flops = flop_count(k);
                        const std::uint64_t dense = dense_flop_count(p, in_dim, out_dim);
                        ContractScratch scratch;
                        const std::uint64_t reps =
                            std::max<std::uint64_t>(10, 2'000'000 / std::max<std::uint64_t>(1, flops));
                        std::vector<double> y(out_dim);
                        const std::uint64_t wall = time_ns(
                            reps, [&] { contract_into(k, x.data.data(), y.data(), scratch); });
                        std::uint64_t dense_wall = 0;
                        bool feasible = true;
                        try {
                            const DenseTensor w = reconstruct_dense(k);
                            const std::uint64_t dreps = std::max<std::uint64_t>(
                                2, 2'000'000 / std::max<std::uint64_t>(1, dense));
                            dense_wall = time_ns(dreps, [&] {
                                volatile double sink = contract_last(w, x, p).data[0];
                                (void)sink;
                            });
                        } catch (const std::length_error&) {
                            feasible = false;
                        }
                        csv << format_name(fmt) << ',' << p << ',' << (shared ? 1 : 0) << ','
                            << in_dim << ',' << rank << ',' << out_dim << ',' << param_count(k)
                            << ',' << flops << ',' << dense << ',' << (feasible ? 1 : 0) << ','
                            << wall << ',' << dense_wall << '\n';
                    }
                }
            }
        }
    }
    std::cout << "bench: 96 rows (" << cfg.bench_csv << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train / ablate / hist share one substream discipline: the master seed is
// split into net, train-set, and test-set streams in that order, so a later
// command rebuilds the exact evaluation set without touching training data.

struct LabStreams {
    Rng net;
    Rng trainset;
    Rng testset;
};

LabStreams lab_streams(std::uint64_t seed) {
    Rng master(seed);
    LabStreams s{master.split(), master.split(), master.split()};
    return s;
}

MicroOwanNet build_net(const RunConfig& cfg, Rng& rng) {
    FusionSetup fusion;
    fusion.format = cfg.format;
    fusion.order = cfg.order;
    fusion.rank = cfg.rank;
    fusion.shared = cfg.shared;
    fusion.add_one = cfg.add1;
    return make_net(kImgChannels, cfg.channels, cfg.blocks, cfg.ops, fusion, cfg.residual,
                    true, rng);
}

PatchSet test_set_for(const RunConfig& cfg) {
    LabStreams streams = lab_streams(cfg.seed);
    return make_patch_set(cfg.test_patches, cfg.side, kImgChannels, cfg.level,
                          streams.testset);
}

std::vector<OpKind> block_kinds(const MicroOwanNet& net, std::size_t block) {
    std::vector<OpKind> kinds;
    for (const OwanOp& op : net.blocks.at(block).ops) kinds.push_back(op.kind);
    return kinds;
}

int run_train(const RunConfig& cfg) {
    LabStreams streams = lab_streams(cfg.seed);
    MicroOwanNet net = build_net(cfg, streams.net);
    const PatchSet trainset =
        make_patch_set(cfg.train_patches, cfg.side, kImgChannels, cfg.level, streams.trainset);
    const PatchSet testset =
        make_patch_set(cfg.test_patches, cfg.side, kImgChannels, cfg.level, streams.testset);
    TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch = cfg.batch;
    tc.seed = cfg.seed;
    tc.lr = cfg.lr;
    const std::vector<double> curve = train(net, trainset, tc);
    std::ofstream loss = open_csv(cfg.loss_csv);
    write_loss_csv(loss, curve);
    const std::filesystem::path parent = std::filesystem::path(cfg.checkpoint).parent_path();
    std::error_code ec;
    if (!parent.empty()) std::filesystem::create_directories(parent, ec);
    save_checkpoint_file(cfg.checkpoint, net);
    const double bench = distorted_mean_psnr(testset);
    const double restored = eval_mean_psnr(net, testset);
    std::cout << std::setprecision(10) << "train: epochs=" << cfg.epochs;
    if (!curve.empty())
        std::cout << " first_loss=" << curve.front() << " final_loss=" << curve.back();
    std::cout << " distorted_psnr_db=" << bench << " restored_psnr_db=" << restored
              << " gain_db=" << restored - bench << " (" << cfg.checkpoint << ", "
              << cfg.loss_csv << ")\n";
    return 0;
}

int run_ablate(const RunConfig& cfg) {
    const MicroOwanNet net = load_checkpoint_file(cfg.checkpoint);
    const PatchSet testset = test_set_for(cfg);
    const AblationTable table = ablation_study(net, testset);
    std::ofstream csv = open_csv(cfg.ablation_csv);
    write_ablation_csv(csv, table, block_kinds(net, 0));
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = 1; i < table.relative_psnr.size(); ++i) {
        lo = std::min(lo, table.relative_psnr[i]);
        hi = std::max(hi, table.relative_psnr[i]);
    }
    std::cout << std::setprecision(10) << "ablate: ops=" << table.relative_psnr.size() - 1
              << " benchmark_psnr_db=" << table.benchmark
              << " intact_relative_db=" << table.relative_psnr.front()
              << " spread_db=" << hi - lo << " (" << cfg.ablation_csv << ")\n";
    return 0;
}

int run_hist(const RunConfig& cfg, std::size_t block) {
    const MicroOwanNet net = load_checkpoint_file(cfg.checkpoint);
    if (block >= net.blocks.size())
        throw config_error("--block " + std::to_string(block) + " out of range; net has " +
                           std::to_string(net.blocks.size()) + " blocks");
    const PatchSet testset = test_set_for(cfg);
    const FeatureHistogram hist = feature_histogram(net, testset, block);
    std::ofstream csv = open_csv(cfg.histogram_csv);
    write_histogram_csv(csv, hist, block_kinds(net, block));
    std::cout << std::setprecision(10) << "hist: block=" << block
              << " ops=" << hist.counts.size() << " range=[" << hist.lo << ',' << hist.hi
              << "] (" << cfg.histogram_csv << ")\n";
    return 0;
}

void apply_env_seed(RunConfig& cfg) {
    const char* env = std::getenv("T1CL_SEED");
    if (!env || !*env) return;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
        throw config_error(std::string("T1CL_SEED is not an integer: ") + env);
    cfg.seed = v;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tensor 1x1 channel-fusion lab: contraction oracles, gradient checks, "
                 "complexity benchmarks, and a toy restoration workbench."};
    app.footer(config_help());
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    bool corrupt = false;
    std::size_t block = 0;

    CLI::App* oracle =
        app.add_subcommand("oracle", "factorized contraction vs dense reconstruction sweep");
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "analytic gradients vs central finite differences");
    CLI::App* bench =
        app.add_subcommand("bench", "parameter/multiplication counts and wall times");
    CLI::App* train =
        app.add_subcommand("train", "train the restoration net; writes checkpoint + loss CSV");
    CLI::App* ablate =
        app.add_subcommand("ablate", "per-operation knockout study on a saved checkpoint");
    CLI::App* hist =
        app.add_subcommand("hist", "per-operation feature histograms on a saved checkpoint");
    for (CLI::App* sub : {oracle, gradcheck, bench, train, ablate, hist}) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--set", sets, "override, section.key=value");
    }
    oracle->add_flag("--inject-corruption", corrupt,
                     "negative control: corrupt one core so the sweep must fail");
    gradcheck->add_flag("--inject-corruption", corrupt,
                        "negative control: bias one gradient so the check must fail");
    hist->add_option("--block", block, "block index to inspect");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg = load_config(config_path, sets);
        apply_env_seed(cfg);
        if (*oracle) return run_oracle(cfg, corrupt);
        if (*gradcheck) return run_gradcheck(cfg, corrupt);
        if (*bench) return run_bench(cfg);
        if (*train) return run_train(cfg);
        if (*ablate) return run_ablate(cfg);
        return run_hist(cfg, block);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const io_error& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 3;
    } catch (const divergence_error& e) {
        std::cerr << "diverged: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
