#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "t1cl/distortion.hpp"
#include "t1cl/tn_kernel.hpp"

namespace t1cl {

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Everything a command needs, resolved from defaults, an optional JSON file
/// (sections kernel/net/train/io), and then --set overrides.  Unknown
/// sections, keys, or value types are rejected rather than ignored.
struct RunConfig {
    // kernel
    KernelFormat format = KernelFormat::CP;
    std::size_t order = 2;
    std::size_t rank = 8;
    bool shared = true;
    bool add1 = true;

    // net
    std::size_t blocks = 2;
    std::size_t ops = 4;
    std::size_t channels = 8;
    bool residual = true;

    // train
    std::size_t epochs = 30;
    std::size_t batch = 32;
    std::uint64_t seed = 1;
    double lr = 0.001;
    DistortLevel level = DistortLevel::Moderate;
    std::size_t train_patches = 2000;
    std::size_t test_patches = 500;
    std::size_t side = 32;

    // io
    std::string checkpoint = "out/net.ckpt";
    std::string loss_csv = "out/loss.csv";
    std::string ablation_csv = "out/ablation.csv";
    std::string histogram_csv = "out/histogram.csv";
    std::string oracle_csv = "out/oracle.csv";
    std::string gradcheck_csv = "out/gradcheck.csv";
    std::string bench_csv = "out/bench.csv";
};

KernelFormat kernel_format_from_name(const std::string& name);

// Load defaults, then the file if given, then dotted overrides like
// "train.lr=0.002".  Any unknown key or malformed value throws config_error.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});
RunConfig default_config(const std::vector<std::string>& overrides = {});

// Every section.key with its default and a one-line description, for --help.
std::string config_help();
// The full key list, for doc-sync checks.
std::vector<std::string> config_keys();

}  // namespace t1cl
