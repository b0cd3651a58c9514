#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "viewco/gradcheck.hpp"
#include "viewco/rng.hpp"
#include "viewco/tensor.hpp"
#include "viewco/tensor_io.hpp"

using namespace viewco;

namespace {

// compensated (Kahan) summation, used as the independent accumulation oracle
double kahan_sum(const std::vector<double>& xs) {
    double s = 0.0, c = 0.0;
    for (double x : xs) {
        double y = x - c;
        double t = s + y;
        c = (t - s) - y;
        s = t;
    }
    return s;
}

// fold a tensor to a scalar against fixed random weights so finite
// differences see every output element
Tensor weighted_sum(const Tensor& t, const Tensor& w) { return sum(mul(t, w)); }

Tensor rand_tensor(int r, int c, Rng& rng, double lo, double hi, bool rg) {
    Tensor t = Tensor::zeros(r, c, rg);
    for (auto& v : *t.data) v = rng.uniform(lo, hi);
    return t;
}

} // namespace

TEST(L2Normalize, ThreeFourFive) {
    Tensor v = Tensor::row({3.0, 4.0});
    Tensor n = l2_normalize(v);
    EXPECT_NEAR(n.at(0, 0), 0.6, 1e-15);
    EXPECT_NEAR(n.at(0, 1), 0.8, 1e-15);
}

TEST(L2Normalize, UnitVectorFixed) {
    Tensor v = Tensor::row({1.0, 0.0, 0.0});
    Tensor n = l2_normalize(v);
    EXPECT_DOUBLE_EQ(n.at(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(n.at(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(n.at(0, 2), 0.0);
}

TEST(L2Normalize, RandomVectorNormAndDirection) {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor v = Tensor::randn(1, 5, rng);
        Tensor n = l2_normalize(v);
        std::vector<double> sq(5), dot(5);
        for (int j = 0; j < 5; ++j) {
            sq[j] = n.at(0, j) * n.at(0, j);
            dot[j] = n.at(0, j) * v.at(0, j);
        }
        double norm = std::sqrt(kahan_sum(sq));
        EXPECT_NEAR(norm, 1.0, 1e-9);
        std::vector<double> vsq(5);
        for (int j = 0; j < 5; ++j) vsq[j] = v.at(0, j) * v.at(0, j);
        double cosine = kahan_sum(dot) / std::sqrt(kahan_sum(vsq));
        EXPECT_NEAR(cosine, 1.0, 1e-9);
    }
}

TEST(L2Normalize, Idempotent) {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor v = Tensor::randn(3, 6, rng);
        Tensor once = l2_normalize(v);
        Tensor twice = l2_normalize(once);
        for (size_t i = 0; i < once.numel(); ++i)
            EXPECT_NEAR((*once.data)[i], (*twice.data)[i], 1e-12);
    }
}

TEST(L2Normalize, DegenerateRowThrows) {
    Tensor v = Tensor::row({0.0, 0.0});
    EXPECT_THROW(l2_normalize(v), DegenerateVector);
    EXPECT_THROW(l2_normalize(Tensor::row({1e-13, 0.0}), 1e-12), DegenerateVector);
}

TEST(Softmax, EqualLogits) {
    for (double c : {0.0, -3.5, 100.0}) {
        for (double tau : {0.07, 1.0, 2.5}) {
            Tensor x = Tensor::row({c, c, c});
            Tensor y = softmax(x, tau);
            for (int j = 0; j < 3; ++j) EXPECT_NEAR(y.at(0, j), 1.0 / 3.0, 1e-15);
        }
    }
}

TEST(Softmax, SingleElement) {
    Tensor y = softmax(Tensor::row({42.0}), 0.5);
    EXPECT_DOUBLE_EQ(y.at(0, 0), 1.0);
}

TEST(Softmax, TwoLogitOracle) {
    // direct scalar evaluation of exp(1)/(exp(1)+1)
    Tensor y = softmax(Tensor::row({1.0, 0.0}), 1.0);
    double expected = std::exp(1.0) / (std::exp(1.0) + 1.0);
    EXPECT_NEAR(y.at(0, 0), expected, 1e-15);
    EXPECT_NEAR(y.at(0, 1), 1.0 - expected, 1e-15);
}

TEST(Softmax, RowsSumToOne) {
    Rng rng(3);
    Tensor x = Tensor::randn(4, 7, rng, 3.0);
    Tensor y = softmax(x, 0.3);
    for (int i = 0; i < 4; ++i) {
        double s = 0.0;
        for (int j = 0; j < 7; ++j) {
            EXPECT_GE(y.at(i, j), 0.0);
            s += y.at(i, j);
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(Softmax, ShiftInvariance) {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = Tensor::randn(2, 5, rng);
        double shift = rng.uniform(-10.0, 10.0);
        Tensor y0 = softmax(x, 0.7);
        Tensor y1 = softmax(add_const(x, shift), 0.7);
        for (size_t i = 0; i < y0.numel(); ++i)
            EXPECT_NEAR((*y0.data)[i], (*y1.data)[i], 1e-12);
    }
}

TEST(Softmax, NonPositiveTemperatureThrows) {
    EXPECT_THROW(softmax(Tensor::row({1.0}), 0.0), InvalidTemperature);
    EXPECT_THROW(softmax(Tensor::row({1.0}), -1.0), InvalidTemperature);
}

TEST(SimilarityMatrix, IdentityRows) {
    Tensor eye = Tensor::from(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor s = similarity_matrix(eye, eye);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(s.at(i, j), i == j ? 1.0 : 0.0);
}

TEST(SimilarityMatrix, SingleEqualRow) {
    Tensor a = l2_normalize(Tensor::row({0.3, -1.2, 0.9}));
    Tensor s = similarity_matrix(a, a);
    EXPECT_EQ(s.rows, 1);
    EXPECT_EQ(s.cols, 1);
    EXPECT_NEAR(s.at(0, 0), 1.0, 1e-12);
}

TEST(SimilarityMatrix, NaiveLoopOracle) {
    Rng rng(13);
    Tensor a = l2_normalize(Tensor::randn(3, 2, rng));
    Tensor b = l2_normalize(Tensor::randn(4, 2, rng));
    Tensor s = similarity_matrix(a, b);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) {
            double dot = 0.0;
            for (int t = 0; t < 2; ++t) dot += a.at(i, t) * b.at(j, t);
            EXPECT_NEAR(s.at(i, j), dot, 1e-12);
            EXPECT_LE(std::abs(s.at(i, j)), 1.0 + 1e-9);
        }
}

TEST(SimilarityMatrix, TransposeSymmetry) {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = l2_normalize(Tensor::randn(3, 4, rng));
        Tensor b = l2_normalize(Tensor::randn(5, 4, rng));
        Tensor ab = similarity_matrix(a, b);
        Tensor ba = similarity_matrix(b, a);
        for (int i = 0; i < ab.rows; ++i)
            for (int j = 0; j < ab.cols; ++j) EXPECT_NEAR(ab.at(i, j), ba.at(j, i), 1e-12);
    }
}

TEST(SimilarityMatrix, DimensionMismatchThrows) {
    Tensor a = Tensor::zeros(2, 3);
    Tensor b = Tensor::zeros(2, 4);
    EXPECT_THROW(similarity_matrix(a, b), ShapeError);
}

TEST(Finiteness, OverflowSurfacesAsError) {
    Tensor huge = Tensor::row({1e9});
    EXPECT_THROW(vexp(huge), NonFiniteObjective);
    EXPECT_THROW(vlog(Tensor::row({-1.0})), NonFiniteObjective);
    EXPECT_THROW(div_by_scalar(Tensor::row({1.0}), Tensor::scalar(0.0)), NonFiniteObjective);
}

TEST(GradCheck, SumIsLinear) {
    Rng rng(23);
    Tensor x = Tensor::randn(3, 4, rng, 1.0, true);
    double err = grad_check([&] { return sum(x); }, {x});
    EXPECT_LT(err, 1e-10);
    for (size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR((*x.grad)[i], 1.0, 1e-12);
}

TEST(GradCheck, SquaredNormAtZero) {
    Tensor x = Tensor::zeros(1, 4, true);
    double err = grad_check([&] { return sum(mul(x, x)); }, {x});
    EXPECT_LT(err, 1e-10);
    for (size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ((*x.grad)[i], 0.0);
}

TEST(GradCheck, ReusedTensorAccumulates) {
    Rng rng(29);
    Tensor x = Tensor::randn(2, 3, rng, 1.0, true);
    Tensor f = sum(add(mul(x, x), x));
    backward(f);
    for (size_t i = 0; i < x.numel(); ++i)
        EXPECT_NEAR((*x.grad)[i], 2.0 * (*x.data)[i] + 1.0, 1e-12);
}

TEST(GradCheck, DetachBlocksGradient) {
    Rng rng(31);
    Tensor x = Tensor::randn(2, 2, rng, 1.0, true);
    Tensor f = sum(mul(x.detach(), x));
    backward(f);
    for (size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR((*x.grad)[i], (*x.data)[i], 1e-12);
}

TEST(GradCheck, StraightThroughIsIdentityInBackward) {
    Rng rng(37);
    Tensor x = Tensor::randn(3, 4, rng, 1.0, true);
    Tensor soft = softmax_rows(x);
    Tensor hard = straight_through_hard(soft);
    for (int i = 0; i < hard.rows; ++i) {
        double s = 0.0;
        int ones = 0;
        for (int j = 0; j < hard.cols; ++j) {
            s += hard.at(i, j);
            if (hard.at(i, j) == 1.0) ++ones;
        }
        EXPECT_DOUBLE_EQ(s, 1.0);
        EXPECT_EQ(ones, 1);
    }
    // backward of hard must equal backward of soft alone
    Tensor w = Tensor::randn(3, 4, rng);
    Tensor f = sum(mul(hard, w));
    backward(f);
    std::vector<double> via_hard = *x.grad;

    x.zero_grad();
    Tensor f2 = sum(mul(softmax_rows(x), w));
    backward(f2);
    for (size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(via_hard[i], (*x.grad)[i], 1e-12);
}

TEST(GradCheck, StraightThroughTieBreaksLow) {
    Tensor s = Tensor::from(2, 3, {0.4, 0.4, 0.2, 0.1, 0.3, 0.3});
    Tensor h = straight_through_hard(s);
    EXPECT_DOUBLE_EQ(h.at(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(h.at(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(h.at(1, 1), 1.0);
    EXPECT_DOUBLE_EQ(h.at(1, 2), 0.0);
}

// every differentiable primitive against central differences, randomized
TEST(GradCheck, AllPrimitivesRandomized) {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(derive_seed(100, seed));
        Tensor a = rand_tensor(3, 4, rng, -2.0, 2.0, true);
        Tensor b = rand_tensor(3, 4, rng, -2.0, 2.0, true);
        Tensor pos = rand_tensor(3, 4, rng, 0.5, 3.0, true);
        Tensor q = rand_tensor(4, 2, rng, -2.0, 2.0, true);
        Tensor v = rand_tensor(1, 4, rng, -1.0, 1.0, true);
        Tensor w = rand_tensor(3, 1, rng, 0.5, 2.0, true);
        Tensor sc = Tensor::scalar(rng.uniform(0.5, 2.0), true);
        Tensor g = rand_tensor(1, 4, rng, 0.5, 1.5, true);
        Tensor bb = rand_tensor(1, 4, rng, -0.5, 0.5, true);
        Tensor w34 = rand_tensor(3, 4, rng, -1.0, 1.0, false);
        Tensor w33 = rand_tensor(3, 3, rng, -1.0, 1.0, false);
        Tensor w42 = rand_tensor(4, 2, rng, -1.0, 1.0, false);
        Tensor w32 = rand_tensor(3, 2, rng, -1.0, 1.0, false);
        Tensor w43 = rand_tensor(4, 3, rng, -1.0, 1.0, false);
        Tensor w14 = rand_tensor(1, 4, rng, -1.0, 1.0, false);
        Tensor w31 = rand_tensor(3, 1, rng, -1.0, 1.0, false);
        Tensor w24 = rand_tensor(2, 4, rng, -1.0, 1.0, false);

        EXPECT_LT(grad_check([&] { return weighted_sum(add(a, b), w34); }, {a, b}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(sub(a, b), w34); }, {a, b}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(mul(a, b), w34); }, {a, b}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(scale(a, -1.7), w34); }, {a}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(add_const(a, 0.9), w34); }, {a}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(vexp(a), w34); }, {a}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(vlog(pos), w34); }, {pos}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(gelu(a), w34); }, {a}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(transpose(a), w43); }, {a}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(take_row(a, 1), w14); }, {a}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(stack_rows({v, take_row(a, 0)}), w24); }, {v, a}),
                  1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(slice_cols(a, 1, 2), w32); }, {a}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(concat_cols({slice_cols(a, 0, 2), slice_cols(b, 2, 1)}), w33); },
                             {a, b}),
                  1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(select_cols(a, {3, 0, 2}), w33); }, {a}), 1e-4);
        EXPECT_LT(grad_check([&] { return pick(a, 2, 1); }, {a}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(diag(matmul_nt(a, b)), w31); }, {a, b}), 1e-4);
        EXPECT_LT(grad_check([&] { return sum(a); }, {a}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(mean_rows(a), w14); }, {a}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(colsum(a), w14); }, {a}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(logsumexp_rows(a), w31); }, {a}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(matmul(a, q), w32); }, {a, q}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(matmul_nt(a, b), w33); }, {a, b}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(add_rowvec(a, v), w34); }, {a, v}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(div_rows_by_vec(a, w), w34); }, {a, w}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(div_by_scalar(a, sc), w34); }, {a, sc}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(softmax_rows(a), w34); }, {a}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(l2_normalize(a), w34); }, {a}), 1e-4);
        EXPECT_LT(grad_check([&] { return weighted_sum(layer_norm(a, g, bb), w34); }, {a, g, bb}), 1e-4);
    }
}

TEST(TensorFile, RoundTripByteIdentical) {
    Rng rng(41);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<TensorEntry> entries;
        int n_tensors = rng.uniform_int(1, 6);
        for (int t = 0; t < n_tensors; ++t) {
            TensorEntry e;
            e.name = "tensor_" + std::to_string(trial) + "_" + std::to_string(t);
            int rank = rng.uniform_int(1, 3);
            size_t n = 1;
            for (int d = 0; d < rank; ++d) {
                uint32_t dim = static_cast<uint32_t>(rng.uniform_int(1, 5));
                e.dims.push_back(dim);
                n *= dim;
            }
            e.dtype = rng.bernoulli(0.5) ? Dtype::f32 : Dtype::f64;
            for (size_t i = 0; i < n; ++i) {
                double x = rng.normal();
                // f32 payloads must hold exactly representable values to round trip
                if (e.dtype == Dtype::f32) x = static_cast<double>(static_cast<float>(x));
                e.values.push_back(x);
            }
            entries.push_back(e);
        }
        std::string bytes = encode_tensor_file(entries);
        auto decoded = decode_tensor_file(bytes);
        std::string bytes2 = encode_tensor_file(decoded);
        EXPECT_EQ(bytes, bytes2);
        ASSERT_EQ(decoded.size(), entries.size());
        for (size_t i = 0; i < entries.size(); ++i) {
            EXPECT_EQ(decoded[i].name, entries[i].name);
            EXPECT_EQ(decoded[i].dims, entries[i].dims);
            EXPECT_EQ(decoded[i].dtype, entries[i].dtype);
        }
    }
}

TEST(TensorFile, FileRoundTrip) {
    TensorEntry e;
    e.name = "weights/w";
    e.dims = {2, 3};
    e.dtype = Dtype::f64;
    e.values = {1.0, -2.5, 0.125, 3.14159, 0.0, -0.0};
    std::string path = testing::TempDir() + "viewco_roundtrip.vwct";
    write_tensor_file(path, {e});
    auto back = read_tensor_file(path);
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].values, e.values);
    Tensor t = back[0].as_tensor();
    EXPECT_EQ(t.rows, 2);
    EXPECT_EQ(t.cols, 3);
}

TEST(TensorFile, MalformedHeaderThrows) {
    EXPECT_THROW(decode_tensor_file("NOPE"), FormatError);
    EXPECT_THROW(decode_tensor_file(""), FormatError);
    std::string bad = encode_tensor_file({});
    bad[0] = 'X';
    EXPECT_THROW(decode_tensor_file(bad), FormatError);
    std::string truncated = encode_tensor_file({{"t", {4}, Dtype::f64, {1, 2, 3, 4}}});
    truncated.resize(truncated.size() - 5);
    EXPECT_THROW(decode_tensor_file(truncated), FormatError);
}
