#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "t1cl/distortion.hpp"
#include "t1cl/network.hpp"

namespace t1cl {

// Training hit a non-finite loss; the run's state is unusable.
struct divergence_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch = 32;
    std::uint64_t seed = 1;
    double lr = 0.001;      // cosine-annealed peak rate
    double lr_min = 1e-5;   // floor; clamped to lr so lr=0 really freezes
};

/// Mini-batch L1 training with Adam and a per-epoch cosine schedule.
/// Deterministic under the config: shuffling, updates, and the fixed-order
/// loss reduction all derive from cfg.seed.  Returns per-epoch mean loss
/// (measured before each update).  A non-finite loss raises divergence_error.
std::vector<double> train(MicroOwanNet& net, const PatchSet& data, const TrainConfig& cfg);

// Mean PSNR of net(distorted) against clean over the set.
double eval_mean_psnr(const MicroOwanNet& net, const PatchSet& testset);
// Benchmark: mean PSNR of the distorted inputs themselves.
double distorted_mean_psnr(const PatchSet& testset);

/// Relative PSNR when each operation is blanked net-wide, against the
/// distorted-input benchmark.  Row 0 is the untouched net, then one row per
/// operation index.
struct AblationTable {
    double benchmark = 0.0;
    std::vector<double> mean_psnr;      // absolute, rows as above
    std::vector<double> relative_psnr;  // mean_psnr minus benchmark
};
AblationTable ablation_study(const MicroOwanNet& net, const PatchSet& testset);

constexpr std::size_t kHistogramBins = 64;

/// Value histograms of each operation's output inside one block, collected
/// over the test set with the capture hook.  All operations share one bin
/// range so spreads are comparable.
struct FeatureHistogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<std::vector<std::uint64_t>> counts;  // [op][bin]
};
FeatureHistogram feature_histogram(const MicroOwanNet& net, const PatchSet& testset,
                                   std::size_t block_index);

void write_loss_csv(std::ostream& out, const std::vector<double>& curve);
void write_ablation_csv(std::ostream& out, const AblationTable& table,
                        const std::vector<OpKind>& ops);
void write_histogram_csv(std::ostream& out, const FeatureHistogram& hist,
                         const std::vector<OpKind>& ops);

}  // namespace t1cl
