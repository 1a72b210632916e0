#include <cmath>
#include <cstddef>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "t1cl/conv_ops.hpp"
#include "t1cl/layer.hpp"
#include "t1cl/network.hpp"
#include "t1cl/tensor.hpp"
#include "t1cl/tn_kernel.hpp"

using namespace t1cl;

namespace {

double rel_err(double got, double want) {
    return std::abs(got - want) / std::max(1.0, std::abs(want));
}

FeatureMap random_map(std::size_t h, std::size_t w, std::size_t c, Rng& rng) {
    return FeatureMap::from_tensor(rng_uniform(rng, {h, w, c}, -1.0, 1.0));
}

FusionSetup cp_fusion(std::size_t order, std::size_t rank, bool add_one,
                      Activation act = Activation::LeakyRelu) {
    FusionSetup fs;
    fs.format = KernelFormat::CP;
    fs.order = order;
    fs.rank = rank;
    fs.shared = true;
    fs.add_one = add_one;
    fs.activation = act;
    return fs;
}

BlockGrads make_block_grads(const OwanBlock& block) {
    BlockGrads g;
    for (const auto& op : block.ops)
        g.ops.push_back(op.weights.empty() ? DenseTensor{}
                                           : DenseTensor::zeros(op.weights.shape));
    for (const auto& c : block.fusion.kernel.cores) g.fusion_cores.push_back(DenseTensor::zeros(c.shape));
    return g;
}

// Pre-activation of the fusion against the lone constant channel.
DenseTensor bias_component(const OwanBlock& block) {
    DenseTensor e = DenseTensor::zeros({block.fusion.kernel.in_dim});
    e.data.back() = 1.0;
    return contract(block.fusion.kernel, e);
}

std::size_t count_changed(const std::vector<FeatureMap>& a, const std::vector<FeatureMap>& b) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (max_abs_diff(a[i].data, b[i].data) != 0.0) ++n;
    return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// spatial operations

TEST_CASE("operation names round-trip and reject garbage") {
    for (int i = 0; i <= 5; ++i) {
        const OpKind k = static_cast<OpKind>(i);
        CHECK(op_kind_from_name(op_kind_name(k)) == k);
    }
    CHECK_THROWS_AS(op_kind_from_name("conv7x7"), std::invalid_argument);
}

TEST_CASE("weight shapes follow the tap geometry") {
    CHECK(op_weight_shape(OpKind::Conv1x1, 4, 6) == std::vector<std::size_t>{1, 1, 4, 6});
    CHECK(op_weight_shape(OpKind::Conv3x3, 4, 6) == std::vector<std::size_t>{3, 3, 4, 6});
    CHECK(op_weight_shape(OpKind::Conv5x5, 2, 2) == std::vector<std::size_t>{5, 5, 2, 2});
    CHECK(op_weight_shape(OpKind::Dilated3x3, 4, 6) == std::vector<std::size_t>{3, 3, 4, 6});
    CHECK_THROWS_AS(op_weight_shape(OpKind::Identity, 4, 4), std::invalid_argument);
    CHECK_THROWS_AS(op_weight_shape(OpKind::AvgPool3x3, 4, 4), std::invalid_argument);

    CHECK(op_has_weights(OpKind::Conv3x3));
    CHECK_FALSE(op_has_weights(OpKind::Identity));
    CHECK_FALSE(op_has_weights(OpKind::AvgPool3x3));

    Rng rng(1);
    DenseTensor w = init_op_weights(OpKind::Conv3x3, 4, 4, rng);
    const double s = std::sqrt(1.0 / 36.0);
    CHECK(max_abs(w) <= s);
    CHECK(init_op_weights(OpKind::AvgPool3x3, 4, 4, rng).empty());
}

TEST_CASE("identity op is a passthrough both ways") {
    Rng rng(2);
    FeatureMap in = random_map(3, 4, 2, rng);
    FeatureMap out = op_forward(OpKind::Identity, DenseTensor{}, in);
    CHECK(max_abs_diff(out.data, in.data) == 0.0);

    FeatureMap up = random_map(3, 4, 2, rng);
    FeatureMap gin = FeatureMap::zeros(3, 4, 2);
    op_backward(OpKind::Identity, DenseTensor{}, in, up, nullptr, gin);
    CHECK(max_abs_diff(gin.data, up.data) == 0.0);
}

TEST_CASE("avgpool divides by nine even where the window hangs off the edge") {
    const double v = 0.5;
    FeatureMap in = FeatureMap::zeros(4, 5, 1);
    for (auto& x : in.data.data) x = v;
    FeatureMap out = op_forward(OpKind::AvgPool3x3, DenseTensor{}, in);
    CHECK(*out.pixel(1, 2) == 9.0 * v / 9.0);  // full window
    CHECK(*out.pixel(0, 0) == 4.0 * v / 9.0);  // corner keeps 4 taps
    CHECK(*out.pixel(0, 2) == 6.0 * v / 9.0);  // edge keeps 6 taps
}

TEST_CASE("avgpool is its own adjoint") {
    Rng rng(3);
    FeatureMap u = random_map(5, 4, 3, rng);
    FeatureMap w = random_map(5, 4, 3, rng);
    FeatureMap au = op_forward(OpKind::AvgPool3x3, DenseTensor{}, u);
    FeatureMap aw = op_forward(OpKind::AvgPool3x3, DenseTensor{}, w);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t t = 0; t < u.data.size(); ++t) {
        lhs += au.data.data[t] * w.data.data[t];
        rhs += u.data.data[t] * aw.data.data[t];
    }
    CHECK(std::abs(lhs - rhs) < 1e-12);
}

TEST_CASE("conv3x3 with a centered delta kernel is the identity") {
    const std::size_t c = 3;
    DenseTensor w = DenseTensor::zeros({3, 3, c, c});
    for (std::size_t ch = 0; ch < c; ++ch) w.data[((1 * 3 + 1) * c + ch) * c + ch] = 1.0;
    Rng rng(4);
    FeatureMap in = random_map(4, 6, c, rng);
    FeatureMap out = op_forward(OpKind::Conv3x3, w, in);
    CHECK(max_abs_diff(out.data, in.data) == 0.0);
}

TEST_CASE("dilated conv reaches two pixels out") {
    // Lone tap at the (0,0) corner of the 3x3 pattern with dilation 2 reads
    // the input two up and two left.
    DenseTensor w = DenseTensor::zeros({3, 3, 1, 1});
    w.data[0] = 1.0;
    Rng rng(5);
    FeatureMap in = random_map(5, 5, 1, rng);
    FeatureMap out = op_forward(OpKind::Dilated3x3, w, in);
    for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 5; ++x) {
            const double want = (y >= 2 && x >= 2) ? *in.pixel(y - 2, x - 2) : 0.0;
            CHECK(*out.pixel(y, x) == want);
        }
}

TEST_CASE("conv1x1 is a per-pixel matrix multiply") {
    Rng rng(6);
    const std::size_t cin = 3, cout = 2;
    DenseTensor w = init_op_weights(OpKind::Conv1x1, cin, cout, rng);
    FeatureMap in = random_map(3, 3, cin, rng);
    FeatureMap out = op_forward(OpKind::Conv1x1, w, in);
    for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 3; ++x)
            for (std::size_t co = 0; co < cout; ++co) {
                double want = 0.0;
                for (std::size_t ci = 0; ci < cin; ++ci)
                    want += w.data[ci * cout + co] * in.pixel(y, x)[ci];
                CHECK(rel_err(out.pixel(y, x)[co], want) < 1e-15);
            }
}

TEST_CASE("op backward matches finite differences for every kind") {
    const double h = 1e-5, tol = 1e-6;
    Rng rng(7);
    const OpKind kinds[] = {OpKind::Conv1x1, OpKind::Conv3x3, OpKind::Conv5x5,
                            OpKind::Dilated3x3, OpKind::AvgPool3x3, OpKind::Identity};
    for (OpKind k : kinds) {
        const std::size_t cin = 2;
        const std::size_t cout = op_has_weights(k) ? 3 : cin;
        DenseTensor w = init_op_weights(k, cin, cout, rng);
        FeatureMap in = random_map(5, 4, cin, rng);
        FeatureMap up = random_map(5, 4, cout, rng);

        auto loss = [&](const DenseTensor& wt, const FeatureMap& m) {
            FeatureMap out = op_forward(k, wt, m);
            double acc = 0.0;
            for (std::size_t t = 0; t < out.data.size(); ++t)
                acc += up.data.data[t] * out.data.data[t];
            return acc;
        };

        DenseTensor gw = w.empty() ? DenseTensor{} : DenseTensor::zeros(w.shape);
        FeatureMap gin = FeatureMap::zeros(5, 4, cin);
        op_backward(k, w, in, up, w.empty() ? nullptr : &gw, gin);

        for (std::size_t t = 0; t < w.size(); ++t) {
            DenseTensor wp = w, wm = w;
            wp.data[t] += h;
            wm.data[t] -= h;
            CHECK(rel_err(gw.data[t], (loss(wp, in) - loss(wm, in)) / (2.0 * h)) < tol);
        }
        for (std::size_t t = 0; t < in.data.size(); ++t) {
            FeatureMap mp = in, mm = in;
            mp.data.data[t] += h;
            mm.data.data[t] -= h;
            CHECK(rel_err(gin.data.data[t], (loss(w, mp) - loss(w, mm)) / (2.0 * h)) < tol);
        }
    }
}

TEST_CASE("ops validate their buffers") {
    Rng rng(8);
    FeatureMap in = random_map(3, 3, 2, rng);
    CHECK_THROWS_AS(op_forward(OpKind::Conv3x3, DenseTensor::zeros({3, 3, 4, 2}), in),
                    std::invalid_argument);
    CHECK_THROWS_AS(op_forward(OpKind::Identity, DenseTensor::zeros({1}), in),
                    std::invalid_argument);
}

// ---------------------------------------------------------------------------
// blocks

TEST_CASE("make_block draws from the bank in order and sizes the fusion") {
    CHECK(default_op_bank(0) == OpKind::Conv1x1);
    CHECK(default_op_bank(1) == OpKind::Conv3x3);
    CHECK(default_op_bank(2) == OpKind::Dilated3x3);
    CHECK(default_op_bank(3) == OpKind::AvgPool3x3);
    CHECK(default_op_bank(4) == OpKind::Conv5x5);
    CHECK(default_op_bank(5) == OpKind::Identity);
    CHECK_THROWS_AS(default_op_bank(6), std::invalid_argument);

    Rng rng(9);
    OwanBlock b = make_block(8, 4, cp_fusion(2, 3, true), true, rng);
    REQUIRE(b.ops.size() == 4);
    CHECK(b.ops[3].kind == OpKind::AvgPool3x3);
    CHECK(b.ops[3].weights.empty());
    CHECK(b.fusion.kernel.in_dim == 4 * 8 + 1);
    CHECK(b.fusion.kernel.out_dim == 8);
    CHECK(b.fusion.kernel.order == 2);
    CHECK(b.fusion.add_one);
    CHECK_THROWS_AS(make_block(8, 0, cp_fusion(1, 2, true), true, rng), std::invalid_argument);
    CHECK_THROWS_AS(make_block(8, 7, cp_fusion(1, 2, true), true, rng), std::invalid_argument);
}

TEST_CASE("uniform rank lists follow the format") {
    CHECK(uniform_rank_list(KernelFormat::CP, 3, 5) == std::vector<std::size_t>{5});
    CHECK(uniform_rank_list(KernelFormat::TT, 3, 5) == std::vector<std::size_t>{5, 5});
    CHECK(uniform_rank_list(KernelFormat::TT, 1, 5).empty());
    CHECK(uniform_rank_list(KernelFormat::TR, 2, 5) == std::vector<std::size_t>{5, 5});
}

TEST_CASE("block forward equals ops -> concat -> fusion -> skip, stage by stage") {
    Rng rng(10);
    for (bool residual : {true, false}) {
        OwanBlock b = make_block(3, 4, cp_fusion(2, 2, true), residual, rng);
        FeatureMap in = random_map(4, 4, 3, rng);
        BlockCache cache;
        FeatureMap out = block_forward(b, in, cache);

        FeatureMap cc = FeatureMap::zeros(4, 4, 4 * 3);
        std::size_t off = 0;
        for (const auto& op : b.ops) {
            FeatureMap fo = op_forward(op.kind, op.weights, in);
            for (std::size_t px = 0; px < cc.pixels(); ++px)
                for (std::size_t c = 0; c < 3; ++c)
                    cc.data.data[px * 12 + off + c] = fo.data.data[px * 3 + c];
            off += 3;
        }
        CHECK(max_abs_diff(cache.concat.data, cc.data) == 0.0);

        LayerCache lc;
        FeatureMap fused = layer_forward(b.fusion, cc, lc);
        if (residual)
            for (std::size_t t = 0; t < fused.data.size(); ++t)
                fused.data.data[t] += in.data.data[t];
        CHECK(max_abs_diff(out.data, fused.data) == 0.0);
    }
}

TEST_CASE("zeroed fusion cores leave a residual block transparent") {
    Rng rng(11);
    OwanBlock b = make_block(4, 3, cp_fusion(2, 2, true), true, rng);
    for (auto& c : b.fusion.kernel.cores) std::fill(c.data.begin(), c.data.end(), 0.0);
    FeatureMap in = random_map(5, 3, 4, rng);
    BlockCache cache;
    FeatureMap out = block_forward(b, in, cache);
    CHECK(max_abs_diff(out.data, in.data) == 0.0);
}

TEST_CASE("blanking one operation matches a manually zeroed concat") {
    Rng rng(12);
    OwanBlock b = make_block(3, 4, cp_fusion(2, 2, true), true, rng);
    FeatureMap in = random_map(3, 4, 3, rng);

    const int k = 1;
    BlockCache hooked;
    FeatureMap out = block_forward(b, in, hooked, k);
    CHECK(hooked.zeroed_op == k);

    BlockCache plain;
    block_forward(b, in, plain);
    FeatureMap cc = plain.concat;
    for (std::size_t px = 0; px < cc.pixels(); ++px)
        for (std::size_t c = 3; c < 6; ++c) cc.data.data[px * 12 + c] = 0.0;
    LayerCache lc;
    FeatureMap fused = layer_forward(b.fusion, cc, lc);
    for (std::size_t t = 0; t < fused.data.size(); ++t) fused.data.data[t] += in.data.data[t];
    CHECK(max_abs_diff(out.data, fused.data) == 0.0);

    BlockGrads g = make_block_grads(b);
    CHECK_THROWS_AS(block_backward(b, hooked, FeatureMap::zeros(3, 4, 3), g), std::logic_error);
    BlockCache scratch;
    CHECK_THROWS_AS(block_forward(b, in, scratch, 4), std::invalid_argument);
}

TEST_CASE("residual blocks insist on matching channel counts") {
    Rng rng(13);
    OwanBlock b = make_block(3, 2, cp_fusion(1, 2, true), true, rng);
    b.fusion.kernel = init_kernel(KernelFormat::CP, 1, 2 * 3 + 1, 4, {2}, false, rng);
    FeatureMap in = random_map(2, 2, 3, rng);
    BlockCache cache;
    CHECK_THROWS_AS(block_forward(b, in, cache), std::invalid_argument);
}

TEST_CASE("block backward matches finite differences") {
    const double h = 1e-5, tol = 1e-6;
    const std::size_t C = 2, H = 3, W = 3;

    OwanBlock b;
    FeatureMap in;
    BlockCache cache;
    bool found = false;
    for (std::uint64_t seed = 1; seed <= 60 && !found; ++seed) {
        Rng rng(seed);
        b = make_block(C, 2, cp_fusion(2, 2, true), true, rng);
        in = random_map(H, W, C, rng);
        block_forward(b, in, cache);
        double margin = 1e30;
        for (double p : cache.fusion.pre) margin = std::min(margin, std::abs(p));
        found = margin > 1e-3;
    }
    REQUIRE(found);

    Rng wr(101);
    FeatureMap up = random_map(H, W, C, wr);
    auto loss = [&](const OwanBlock& blk, const FeatureMap& m) {
        BlockCache c;
        FeatureMap out = block_forward(blk, m, c);
        double acc = 0.0;
        for (std::size_t t = 0; t < out.data.size(); ++t)
            acc += up.data.data[t] * out.data.data[t];
        return acc;
    };

    BlockGrads g = make_block_grads(b);
    FeatureMap gin = block_backward(b, cache, up, g);

    for (std::size_t o = 0; o < b.ops.size(); ++o) {
        for (std::size_t t = 0; t < b.ops[o].weights.size(); ++t) {
            OwanBlock bp = b, bm = b;
            bp.ops[o].weights.data[t] += h;
            bm.ops[o].weights.data[t] -= h;
            CHECK(rel_err(g.ops[o].data[t], (loss(bp, in) - loss(bm, in)) / (2.0 * h)) < tol);
        }
    }
    for (std::size_t s = 0; s < b.fusion.kernel.cores.size(); ++s) {
        for (std::size_t t = 0; t < b.fusion.kernel.cores[s].size(); ++t) {
            OwanBlock bp = b, bm = b;
            bp.fusion.kernel.cores[s].data[t] += h;
            bm.fusion.kernel.cores[s].data[t] -= h;
            CHECK(rel_err(g.fusion_cores[s].data[t], (loss(bp, in) - loss(bm, in)) / (2.0 * h)) <
                  tol);
        }
    }
    for (std::size_t t = 0; t < in.data.size(); ++t) {
        FeatureMap mp = in, mm = in;
        mp.data.data[t] += h;
        mm.data.data[t] -= h;
        CHECK(rel_err(gin.data.data[t], (loss(b, mp) - loss(b, mm)) / (2.0 * h)) < tol);
    }
}

// ---------------------------------------------------------------------------
// whole network

TEST_CASE("a fresh net with the global skip is an identity") {
    Rng rng(14);
    MicroOwanNet net = make_net(2, 6, 2, 4, cp_fusion(2, 3, true), true, true, rng);
    CHECK(net.stem.shape == std::vector<std::size_t>{3, 3, 2, 6});
    CHECK(net.head.shape == std::vector<std::size_t>{3, 3, 6, 2});
    CHECK(max_abs(net.head) == 0.0);

    FeatureMap in = random_map(6, 7, 2, rng);
    NetCache cache;
    FeatureMap out = net_forward(net, in, cache);
    CHECK(max_abs_diff(out.data, in.data) == 0.0);
}

TEST_CASE("parameter listing and count agree") {
    Rng rng(15);
    MicroOwanNet net = make_net(1, 4, 2, 2, cp_fusion(2, 2, true), true, true, rng);
    auto ps = net_parameters(net);
    std::size_t total = 0;
    for (auto* p : ps) total += p->size();
    CHECK(total == net_param_count(net));
    // stem 36, per block: conv1x1 16 + conv3x3 144 + one 9x2x4 fusion core, head 36
    CHECK(net_param_count(net) == 36 + 2 * (16 + 144 + 72) + 36);

    NetGrads g = zero_grads(net);
    auto gs = grad_tensors(g);
    REQUIRE(gs.size() == ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) CHECK(gs[i]->shape == ps[i]->shape);
}

TEST_CASE("net forward equals stem -> blocks -> head -> skip") {
    Rng rng(16);
    MicroOwanNet net = make_net(2, 4, 2, 3, cp_fusion(2, 2, true), true, true, rng);
    Rng hr = rng.split();
    net.head = init_op_weights(OpKind::Conv3x3, 4, 2, hr);  // nonzero head

    FeatureMap in = random_map(5, 5, 2, rng);
    NetCache cache;
    FeatureMap out = net_forward(net, in, cache);

    FeatureMap cur = op_forward(OpKind::Conv3x3, net.stem, in);
    for (const auto& b : net.blocks) {
        BlockCache bc;
        cur = block_forward(b, cur, bc);
    }
    FeatureMap expect = op_forward(OpKind::Conv3x3, net.head, cur);
    for (std::size_t t = 0; t < expect.data.size(); ++t)
        expect.data.data[t] += in.data.data[t];
    CHECK(max_abs_diff(out.data, expect.data) == 0.0);

    FeatureMap bad = random_map(5, 5, 3, rng);
    NetCache c2;
    CHECK_THROWS_AS(net_forward(net, bad, c2), std::invalid_argument);
}

TEST_CASE("run hooks blank an op everywhere and capture a concat") {
    Rng rng(17);
    MicroOwanNet net = make_net(1, 3, 2, 3, cp_fusion(2, 2, true), true, true, rng);
    Rng hr = rng.split();
    net.head = init_op_weights(OpKind::Conv3x3, 3, 1, hr);
    FeatureMap in = random_map(4, 4, 1, rng);

    RunHooks hooks;
    hooks.zero_op = 2;
    hooks.capture_block = 1;
    NetCache cache;
    FeatureMap out = net_forward(net, in, cache, &hooks);
    CHECK(cache.hooked);

    // Manual chain with the same op blanked in every block.
    FeatureMap cur = op_forward(OpKind::Conv3x3, net.stem, in);
    FeatureMap want_capture;
    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
        BlockCache bc;
        cur = block_forward(net.blocks[b], cur, bc, 2);
        if (b == 1) want_capture = bc.concat;
    }
    FeatureMap expect = op_forward(OpKind::Conv3x3, net.head, cur);
    for (std::size_t t = 0; t < expect.data.size(); ++t)
        expect.data.data[t] += in.data.data[t];
    CHECK(max_abs_diff(out.data, expect.data) == 0.0);

    REQUIRE(hooks.captured.channels == 3 * 3);
    CHECK(max_abs_diff(hooks.captured.data, want_capture.data) == 0.0);

    CHECK_THROWS_AS(net_backward(net, cache, FeatureMap::zeros(4, 4, 1)), std::logic_error);
}

TEST_CASE("whole-net gradients match finite differences under an L1 loss") {
    const double h = 1e-5, tol = 1e-5;
    const std::size_t H = 8, W = 8;

    MicroOwanNet net;
    FeatureMap in, target;
    NetCache cache;
    FeatureMap out;
    bool found = false;
    for (std::uint64_t seed = 1; seed <= 60 && !found; ++seed) {
        Rng rng(seed);
        net = make_net(1, 4, 2, 2, cp_fusion(2, 2, true), true, true, rng);
        Rng hr = rng.split();
        net.head = init_op_weights(OpKind::Conv3x3, 4, 1, hr);
        in = random_map(H, W, 1, rng);
        target = in;
        for (auto& v : target.data.data) {
            const double off = 0.15 + 0.2 * rng.next_unit();
            v += (rng.next_unit() < 0.5 ? -off : off);
        }
        cache = NetCache{};
        out = net_forward(net, in, cache);
        double margin = 1e30;
        for (const auto& bc : cache.blocks)
            for (double p : bc.fusion.pre) margin = std::min(margin, std::abs(p));
        for (std::size_t t = 0; t < out.data.size(); ++t)
            margin = std::min(margin, std::abs(out.data.data[t] - target.data.data[t]));
        found = margin > 1e-3;
    }
    REQUIRE(found);

    auto loss = [&](MicroOwanNet& n) {
        NetCache c;
        FeatureMap o = net_forward(n, in, c);
        double acc = 0.0;
        for (std::size_t t = 0; t < o.data.size(); ++t)
            acc += std::abs(o.data.data[t] - target.data.data[t]);
        return acc;
    };

    FeatureMap up = FeatureMap::zeros(H, W, 1);
    for (std::size_t t = 0; t < out.data.size(); ++t)
        up.data.data[t] = out.data.data[t] > target.data.data[t] ? 1.0 : -1.0;
    NetGrads g = net_backward(net, cache, up);

    auto ps = net_parameters(net);
    auto gs = grad_tensors(g);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        for (std::size_t t = 0; t < ps[i]->size(); ++t) {
            const double keep = ps[i]->data[t];
            ps[i]->data[t] = keep + h;
            const double lp = loss(net);
            ps[i]->data[t] = keep - h;
            const double lm = loss(net);
            ps[i]->data[t] = keep;
            CHECK(rel_err(gs[i]->data[t], (lp - lm) / (2.0 * h)) < tol);
        }
    }
}

// ---------------------------------------------------------------------------
// decomposition

TEST_CASE("order-1 components sum to the fusion pre-activation") {
    Rng rng(18);
    OwanBlock b = make_block(4, 3, cp_fusion(1, 4, true), true, rng);
    FeatureMap in = random_map(4, 4, 4, rng);

    BlockCache cache;
    block_forward(b, in, cache);
    auto comps = decompose_by_operation(b, in);
    REQUIRE(comps.size() == 3);
    for (const auto& c : comps) {
        CHECK(c.height == 4);
        CHECK(c.channels == 4);
    }
    for (std::size_t t = 0; t < cache.fusion.pre.size(); ++t) {
        double sum = 0.0;
        for (const auto& c : comps) sum += c.data.data[t];
        CHECK(rel_err(sum, cache.fusion.pre[t]) < 1e-12);
    }

    CHECK_THROWS_AS(decompose_by_operation_highorder(b, in), std::invalid_argument);
}

TEST_CASE("zeroing the last op leaves only its constant-channel share") {
    Rng rng(19);
    OwanBlock b = make_block(3, 2, cp_fusion(1, 3, true), true, rng);
    FeatureMap in = random_map(3, 3, 3, rng);

    auto base = decompose_by_operation(b, in);
    auto cut = decompose_by_operation(b, in, 1);
    REQUIRE(cut.size() == 2);
    CHECK(max_abs_diff(base[0].data, cut[0].data) == 0.0);

    DenseTensor bias = bias_component(b);
    for (std::size_t px = 0; px < cut[1].pixels(); ++px)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(cut[1].data.data[px * 3 + j] == bias.data[j]);
}

TEST_CASE("order-1: blanking one op changes exactly one component") {
    Rng rng(20);
    OwanBlock b = make_block(3, 4, cp_fusion(1, 3, true), true, rng);
    FeatureMap in = random_map(3, 4, 3, rng);
    auto base = decompose_by_operation(b, in);

    for (int k = 0; k < 4; ++k) {
        auto cut = decompose_by_operation(b, in, k);
        CHECK(count_changed(base, cut) == 1);
        CHECK(max_abs_diff(base[k].data, cut[k].data) != 0.0);
        if (k < 3) CHECK(max_abs(cut[k].data) == 0.0);  // no constant channel in its slice
    }
}

TEST_CASE("high-order components sum to the pre-activation") {
    Rng rng(21);
    OwanBlock b = make_block(3, 2, cp_fusion(2, 2, true), true, rng);
    FeatureMap in = random_map(3, 3, 3, rng);

    BlockCache cache;
    block_forward(b, in, cache);
    auto comps = decompose_by_operation_highorder(b, in);
    REQUIRE(comps.size() == 4);  // N=2 ops at order 2
    REQUIRE(comps.count({0, 0}) == 1);
    REQUIRE(comps.count({0, 1}) == 1);
    REQUIRE(comps.count({1, 0}) == 1);
    REQUIRE(comps.count({1, 1}) == 1);

    for (std::size_t t = 0; t < cache.fusion.pre.size(); ++t) {
        double sum = 0.0;
        for (const auto& kv : comps) sum += kv.second.data.data[t];
        CHECK(rel_err(sum, cache.fusion.pre[t]) < 1e-10);
    }

    CHECK_THROWS_AS(decompose_by_operation(b, in), std::invalid_argument);
}

TEST_CASE("order-p: blanking one op changes N^p minus (N-1)^p components") {
    Rng rng(22);
    OwanBlock b = make_block(3, 3, cp_fusion(2, 2, true), true, rng);
    FeatureMap in = random_map(3, 3, 3, rng);

    auto base = decompose_by_operation_highorder(b, in);
    REQUIRE(base.size() == 9);

    for (int k = 0; k < 3; ++k) {
        auto cut = decompose_by_operation_highorder(b, in, k);
        std::size_t changed = 0;
        for (const auto& kv : base) {
            const bool touches = kv.first[0] == k || kv.first[1] == k;
            const FeatureMap& after = cut.at(kv.first);
            if (max_abs_diff(kv.second.data, after.data) != 0.0) {
                ++changed;
                CHECK(touches);
            } else {
                CHECK_FALSE(touches);
            }
            if (touches && k < 2) CHECK(max_abs(after.data) == 0.0);
        }
        CHECK(changed == 9 - 4);  // 3^2 - 2^2
    }
}

TEST_CASE("high-order decomposition refuses to blow the component budget") {
    Rng rng(23);
    OwanBlock b = make_block(4, 4, cp_fusion(2, 2, true), true, rng);
    FeatureMap in = FeatureMap::zeros(400, 400, 4);  // 16 tuples * 160000 px * 4 > 1e7
    CHECK_THROWS_AS(decompose_by_operation_highorder(b, in), std::length_error);
}

// ---------------------------------------------------------------------------
// checkpoints

TEST_CASE("checkpoints round-trip byte for byte and preserve the function") {
    Rng rng(24);
    MicroOwanNet net = make_net(2, 3, 2, 4, cp_fusion(2, 2, true), true, true, rng);
    Rng hr = rng.split();
    net.head = init_op_weights(OpKind::Conv3x3, 3, 2, hr);

    std::ostringstream os;
    save_checkpoint(os, net);
    const std::string bytes = os.str();

    std::istringstream is(bytes);
    MicroOwanNet loaded = load_checkpoint(is);
    std::ostringstream os2;
    save_checkpoint(os2, loaded);
    CHECK(os2.str() == bytes);

    FeatureMap in = random_map(4, 5, 2, rng);
    NetCache ca, cb;
    FeatureMap a = net_forward(net, in, ca);
    FeatureMap bmap = net_forward(loaded, in, cb);
    CHECK(max_abs_diff(a.data, bmap.data) == 0.0);
}

TEST_CASE("checkpoint files work and corruption is rejected") {
    Rng rng(25);
    MicroOwanNet net = make_net(1, 3, 1, 2, cp_fusion(1, 2, true), true, true, rng);
    const std::string path = "/tmp/t1cl_test_ckpt.bin";
    save_checkpoint_file(path, net);
    MicroOwanNet loaded = load_checkpoint_file(path);
    CHECK(net_param_count(loaded) == net_param_count(net));

    std::ostringstream os;
    save_checkpoint(os, net);
    const std::string bytes = os.str();

    {
        std::string bad = bytes;
        bad[0] = 'X';
        std::istringstream is(bad);
        CHECK_THROWS_AS(load_checkpoint(is), io_error);
    }
    {
        std::string bad = bytes;
        bad[4] = 0x02;  // unknown version
        std::istringstream is(bad);
        CHECK_THROWS_AS(load_checkpoint(is), io_error);
    }
    {
        std::string bad = bytes;
        bad[19] = 0x09;  // first op kind out of range
        std::istringstream is(bad);
        CHECK_THROWS_AS(load_checkpoint(is), io_error);
    }
    {
        std::istringstream is(bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_AS(load_checkpoint(is), io_error);
    }
    CHECK_THROWS_AS(load_checkpoint_file("/tmp/t1cl_missing_ckpt.bin"), io_error);
}
