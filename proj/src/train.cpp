#include "t1cl/train.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>

#include "t1cl/metrics.hpp"
#include "t1cl/optim.hpp"

namespace t1cl {

namespace {

void accumulate(std::vector<DenseTensor*>& acc, NetGrads& sample) {
    auto src = grad_tensors(sample);
    for (std::size_t i = 0; i < acc.size(); ++i)
        for (std::size_t t = 0; t < acc[i]->size(); ++t)
            acc[i]->data[t] += src[i]->data[t];
}

std::vector<OpKind> block_op_kinds(const MicroOwanNet& net) {
    std::vector<OpKind> kinds;
    for (const OwanOp& op : net.blocks.at(0).ops) kinds.push_back(op.kind);
    for (const OwanBlock& b : net.blocks)
        if (b.ops.size() != kinds.size())
            throw std::invalid_argument("blocks disagree on operation count");
    return kinds;
}

}  // namespace

std::vector<double> train(MicroOwanNet& net, const PatchSet& data, const TrainConfig& cfg) {
    if (data.patches.empty()) throw std::invalid_argument("empty training set");
    const std::size_t n = data.patches.size();

    Rng rng(cfg.seed);
    auto params = net_parameters(net);
    AdamState adam = make_adam_state(params);
    const double lr_min = std::min(cfg.lr_min, cfg.lr);

    std::vector<double> curve;
    std::vector<std::size_t> order(n);
    std::vector<double> sample_loss(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    NetCache cache;  // reused across samples to keep its buffers warm

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr, lr_min);
        for (std::size_t i = n; i-- > 1;) {
            const std::size_t j = rng.next_u64() % (i + 1);
            std::swap(order[i], order[j]);
        }

        for (std::size_t start = 0; start < n; start += cfg.batch) {
            const std::size_t stop = std::min(start + cfg.batch, n);
            const double bsz = static_cast<double>(stop - start);

            NetGrads grads = zero_grads(net);
            auto acc = grad_tensors(grads);
            for (std::size_t b = start; b < stop; ++b) {
                const Patch& patch = data.patches[order[b]];
                FeatureMap out = net_forward(net, patch.distorted, cache);
                sample_loss[order[b]] = l1_loss(out, patch.clean);
                if (!std::isfinite(sample_loss[order[b]]))
                    throw divergence_error("non-finite loss at epoch " + std::to_string(epoch));

                // d(batch-mean L1)/d(out)
                const double scale = 1.0 / (static_cast<double>(out.data.size()) * bsz);
                FeatureMap up = FeatureMap::zeros(out.height, out.width, out.channels);
                for (std::size_t t = 0; t < out.data.size(); ++t) {
                    const double d = out.data.data[t] - patch.clean.data.data[t];
                    up.data.data[t] = d > 0.0 ? scale : (d < 0.0 ? -scale : 0.0);
                }
                NetGrads sample = net_backward(net, cache, up);
                accumulate(acc, sample);
            }
            adam_step(adam, params, acc, lr);
        }

        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += sample_loss[i];
        mean /= static_cast<double>(n);
        if (!std::isfinite(mean))
            throw divergence_error("non-finite epoch loss at epoch " + std::to_string(epoch));
        curve.push_back(mean);
    }
    return curve;
}

double eval_mean_psnr(const MicroOwanNet& net, const PatchSet& testset) {
    if (testset.patches.empty()) throw std::invalid_argument("empty evaluation set");
    double acc = 0.0;
    NetCache cache;
    for (const Patch& p : testset.patches) {
        acc += psnr(net_forward(net, p.distorted, cache), p.clean);
    }
    return acc / static_cast<double>(testset.patches.size());
}

double distorted_mean_psnr(const PatchSet& testset) {
    if (testset.patches.empty()) throw std::invalid_argument("empty evaluation set");
    double acc = 0.0;
    for (const Patch& p : testset.patches) acc += psnr(p.distorted, p.clean);
    return acc / static_cast<double>(testset.patches.size());
}

AblationTable ablation_study(const MicroOwanNet& net, const PatchSet& testset) {
    const std::size_t num_ops = block_op_kinds(net).size();

    AblationTable table;
    table.benchmark = distorted_mean_psnr(testset);
    table.mean_psnr.push_back(eval_mean_psnr(net, testset));  // hook-free baseline

    for (std::size_t k = 0; k < num_ops; ++k) {
        double acc = 0.0;
        for (const Patch& p : testset.patches) {
            RunHooks hooks;
            hooks.zero_op = static_cast<int>(k);
            NetCache cache;
            acc += psnr(net_forward(net, p.distorted, cache, &hooks), p.clean);
        }
        table.mean_psnr.push_back(acc / static_cast<double>(testset.patches.size()));
    }
    for (double v : table.mean_psnr) table.relative_psnr.push_back(v - table.benchmark);
    return table;
}

FeatureHistogram feature_histogram(const MicroOwanNet& net, const PatchSet& testset,
                                   std::size_t block_index) {
    if (block_index >= net.blocks.size()) throw std::invalid_argument("block index out of range");
    if (testset.patches.empty()) throw std::invalid_argument("empty evaluation set");
    const std::size_t num_ops = net.blocks[block_index].ops.size();
    const std::size_t per_op = net.channels;

    // Pass 1: shared value range over every operation's outputs.
    double lo = 0.0, hi = 0.0;
    bool first = true;
    auto visit = [&](auto&& fn) {
        for (const Patch& p : testset.patches) {
            RunHooks hooks;
            hooks.capture_block = static_cast<int>(block_index);
            NetCache cache;
            net_forward(net, p.distorted, cache, &hooks);
            fn(hooks.captured);
        }
    };
    visit([&](const FeatureMap& cap) {
        for (double v : cap.data.data) {
            if (first) {
                lo = hi = v;
                first = false;
            } else {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
    });

    FeatureHistogram hist;
    hist.lo = lo;
    hist.hi = hi;
    hist.counts.assign(num_ops, std::vector<std::uint64_t>(kHistogramBins, 0));
    const double span = hi - lo;

    visit([&](const FeatureMap& cap) {
        for (std::size_t px = 0; px < cap.pixels(); ++px) {
            const double* v = cap.data.data.data() + px * cap.channels;
            for (std::size_t o = 0; o < num_ops; ++o) {
                for (std::size_t c = 0; c < per_op; ++c) {
                    std::size_t bin = 0;
                    if (span > 0.0) {
                        const double f = (v[o * per_op + c] - lo) / span;
                        bin = std::min(static_cast<std::size_t>(f * kHistogramBins),
                                       kHistogramBins - 1);
                    }
                    ++hist.counts[o][bin];
                }
            }
        }
    });
    return hist;
}

void write_loss_csv(std::ostream& out, const std::vector<double>& curve) {
    out << "epoch,mean_l1\n" << std::setprecision(17);
    for (std::size_t e = 0; e < curve.size(); ++e) out << e << "," << curve[e] << "\n";
}

void write_ablation_csv(std::ostream& out, const AblationTable& table,
                        const std::vector<OpKind>& ops) {
    out << "ablated_op,mean_psnr_db,relative_psnr_db\n" << std::setprecision(17);
    for (std::size_t row = 0; row < table.mean_psnr.size(); ++row) {
        if (row == 0)
            out << "none";
        else
            out << op_kind_name(ops.at(row - 1));
        out << "," << table.mean_psnr[row] << "," << table.relative_psnr[row] << "\n";
    }
}

void write_histogram_csv(std::ostream& out, const FeatureHistogram& hist,
                         const std::vector<OpKind>& ops) {
    out << "op,bin,bin_lo,bin_hi,count\n" << std::setprecision(17);
    const double width = (hist.hi - hist.lo) / static_cast<double>(kHistogramBins);
    for (std::size_t o = 0; o < hist.counts.size(); ++o) {
        for (std::size_t b = 0; b < kHistogramBins; ++b) {
            out << op_kind_name(ops.at(o)) << "," << b << ","
                << hist.lo + width * static_cast<double>(b) << ","
                << hist.lo + width * static_cast<double>(b + 1) << "," << hist.counts[o][b]
                << "\n";
        }
    }
}

}  // namespace t1cl
