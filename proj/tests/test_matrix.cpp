#include <catch2/catch_amalgamated.hpp>

#include <attnlab/decomp.hpp>
#include <attnlab/matrix.hpp>
#include <attnlab/rng.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

using namespace attnlab;

namespace {

// Oracle: k-outer triple loop, a different accumulation order than the
// library's row-inner kernel.
Matrix matmul_oracle(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t k = 0; k < a.cols(); ++k)
        for (std::size_t i = 0; i < a.rows(); ++i)
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += a(i, k) * b(k, j);
    return c;
}

// Oracle: unshifted exp/normalize, valid for small-magnitude logits.
Matrix softmax_oracle(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) {
        double denom = 0.0;
        for (std::size_t i = 0; i < m.rows(); ++i) denom += std::exp(m(i, j));
        for (std::size_t i = 0; i < m.rows(); ++i) out(i, j) = std::exp(m(i, j)) / denom;
    }
    return out;
}

// Oracle: rank by Gaussian elimination with partial pivoting.
std::size_t rank_oracle(Matrix a, double tol = 1e-9) {
    const std::size_t rows = a.rows(), cols = a.cols();
    std::size_t rank = 0;
    for (std::size_t col = 0; col < cols && rank < rows; ++col) {
        std::size_t piv = rank;
        for (std::size_t i = rank + 1; i < rows; ++i)
            if (std::abs(a(i, col)) > std::abs(a(piv, col))) piv = i;
        if (std::abs(a(piv, col)) < tol) continue;
        for (std::size_t j = 0; j < cols; ++j) std::swap(a(rank, j), a(piv, j));
        for (std::size_t i = rank + 1; i < rows; ++i) {
            const double f = a(i, col) / a(rank, col);
            for (std::size_t j = 0; j < cols; ++j) a(i, j) -= f * a(rank, j);
        }
        ++rank;
    }
    return rank;
}

} // namespace

TEST_CASE("matmul agrees with a triple-loop oracle", "[matrix]") {
    Rng rng(101);
    for (int trial = 0; trial < 5; ++trial) {
        const Matrix a = rng.normal_matrix(4 + trial, 3 + trial);
        const Matrix b = rng.normal_matrix(3 + trial, 5);
        REQUIRE(max_abs_diff(matmul(a, b), matmul_oracle(a, b)) < 1e-13);
    }
}

TEST_CASE("matmul on a hand-computed instance", "[matrix]") {
    const Matrix a = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
    const Matrix b = Matrix::from_rows({{7, 8}, {9, 10}, {11, 12}});
    const Matrix expected = Matrix::from_rows({{58, 64}, {139, 154}});
    REQUIRE(max_abs_diff(matmul(a, b), expected) == 0.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions", "[matrix]") {
    REQUIRE_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), DimensionMismatch);
}

TEST_CASE("transpose-fused products match explicit transposition", "[matrix]") {
    Rng rng(102);
    const Matrix a = rng.normal_matrix(4, 6);
    const Matrix b = rng.normal_matrix(4, 5);
    const Matrix c = rng.normal_matrix(3, 6);
    REQUIRE(max_abs_diff(matmul_at_b(a, b), matmul(a.transposed(), b)) == 0.0);
    REQUIRE(max_abs_diff(matmul_a_bt(a, c), matmul(a, c.transposed())) == 0.0);
}

TEST_CASE("elementwise helpers", "[matrix]") {
    Rng rng(103);
    const Matrix a = rng.normal_matrix(4, 4);
    const Matrix b = rng.normal_matrix(4, 4);

    const Matrix h = hadamard(a, b);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) REQUIRE(h(i, j) == a(i, j) * b(i, j));

    // sym + skew reassembles the matrix; each part has its defining symmetry.
    const Matrix s = sym_part(a), k = skew_part(a);
    REQUIRE(max_abs_diff(s + k, a) < 1e-15);
    REQUIRE(max_abs_diff(s, s.transposed()) == 0.0);
    REQUIRE(max_abs_diff(k, k.transposed() * -1.0) == 0.0);
}

TEST_CASE("softmax columns agree with the unshifted oracle on tame logits", "[matrix]") {
    Rng rng(104);
    const Matrix logits = rng.uniform_matrix(5, 7, -3.0, 3.0);
    REQUIRE(max_abs_diff(softmax_columns(logits), softmax_oracle(logits)) < 1e-15);
}

TEST_CASE("softmax columns are stochastic and shift invariant", "[matrix]") {
    Rng rng(105);
    const Matrix logits = rng.normal_matrix(6, 4);
    const Matrix p = softmax_columns(logits);
    for (std::size_t j = 0; j < 4; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < 6; ++i) {
            REQUIRE(p(i, j) > 0.0);
            sum += p(i, j);
        }
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
    }

    Matrix shifted = logits;
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t i = 0; i < 6; ++i) shifted(i, j) += 100.0 * (j + 1.0);
    REQUIRE(max_abs_diff(softmax_columns(shifted), p) < 1e-14);
}

TEST_CASE("softmax survives logits that overflow naive exp", "[matrix]") {
    const Matrix logits = Matrix::from_rows({{1000.0, -1000.0}, {998.0, -1000.0}});
    const Matrix p = softmax_columns(logits);
    REQUIRE(p.all_finite());
    // First column reduces to softmax(2, 0) after the shift.
    const double e2 = std::exp(2.0);
    REQUIRE(p(0, 0) == Catch::Approx(e2 / (e2 + 1.0)).margin(1e-15));
    REQUIRE(p(0, 1) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("xoshiro stream matches a reference reimplementation", "[rng]") {
    // Reference: splitmix64-seeded xoshiro256** exactly as published.
    auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
    std::uint64_t sm = 42;
    std::uint64_t s[4];
    for (auto& w : s) {
        std::uint64_t z = (sm += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        w = z ^ (z >> 31);
    }
    Rng rng(42);
    for (int i = 0; i < 100; ++i) {
        const std::uint64_t expected = rotl(s[1] * 5, 7) * 9;
        const std::uint64_t t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        REQUIRE(rng.next_u64() == expected);
    }
}

TEST_CASE("rng determinism and stream independence", "[rng]") {
    Rng a(7), b(7);
    for (int i = 0; i < 32; ++i) REQUIRE(a.next_u64() == b.next_u64());

    // Distinct split streams decorrelate immediately.
    Rng base(7);
    REQUIRE(base.split(0).next_u64() != base.split(1).next_u64());
    // split is a pure function of (seed, stream), insensitive to draw state.
    Rng used(7);
    used.next_u64();
    REQUIRE(base.split(3).next_u64() == used.split(3).next_u64());
}

TEST_CASE("uniform and normal draws have sane ranges and moments", "[rng]") {
    Rng rng(2024);
    double sum = 0.0, sumsq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sumsq += z * z;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    REQUIRE(std::abs(mean) < 0.03);
    REQUIRE(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("numerical rank matches Gaussian elimination on factored matrices", "[decomp]") {
    Rng rng(301);
    for (std::size_t r = 1; r <= 5; ++r) {
        const Matrix b = rng.normal_matrix(8, r);
        const Matrix c = rng.normal_matrix(r, 6);
        const Matrix a = matmul(b, c); // rank r by construction
        REQUIRE(numerical_rank(a) == r);
        REQUIRE(rank_oracle(a) == r);
    }
    REQUIRE(numerical_rank(Matrix(4, 4)) == 0);
    REQUIRE(numerical_rank(Matrix::identity(5)) == 5);
}

TEST_CASE("left inverse satisfies its defining identity", "[decomp]") {
    Rng rng(302);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix x = rng.normal_matrix(8, 5);
        const Matrix xdag = left_inverse(x);
        REQUIRE(xdag.rows() == 5);
        REQUIRE(xdag.cols() == 8);
        REQUIRE(max_abs_diff(matmul(xdag, x), Matrix::identity(5)) < 1e-10);
    }
}

TEST_CASE("left inverse rejects wide and rank-deficient inputs", "[decomp]") {
    REQUIRE_THROWS_AS(left_inverse(Matrix(3, 5)), DimensionMismatch);

    Rng rng(303);
    const Matrix thin = matmul(rng.normal_matrix(8, 2), rng.normal_matrix(2, 5));
    REQUIRE_THROWS_AS(left_inverse(thin), RankDeficient);
}

TEST_CASE("condition proxy flags near-singular matrices", "[decomp]") {
    REQUIRE(condition_proxy(Matrix::identity(4)) == Catch::Approx(1.0));
    Matrix near = Matrix::identity(3);
    near(2, 2) = 1e-9;
    REQUIRE(condition_proxy(near) > 1e8);
}

TEST_CASE("jacobi eigendecomposition reconstructs and is orthogonal", "[decomp]") {
    Rng rng(304);
    const Matrix g = rng.normal_matrix(6, 6);
    const Matrix a = sym_part(g);
    const SymmetricEig eig = jacobi_eigh(a);

    REQUIRE(max_abs_diff(matmul_at_b(eig.vectors, eig.vectors), Matrix::identity(6)) < 1e-12);

    Matrix recon(6, 6);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            for (std::size_t k = 0; k < 6; ++k)
                recon(i, j) += eig.vectors(i, k) * eig.values[k] * eig.vectors(j, k);
    REQUIRE(max_abs_diff(recon, a) < 1e-12);
}

TEST_CASE("jacobi eigenvalues on a hand-solved matrix", "[decomp]") {
    // [[2,1],[1,2]] has eigenvalues 1 and 3.
    const SymmetricEig eig = jacobi_eigh(Matrix::from_rows({{2, 1}, {1, 2}}));
    std::vector<double> vals = eig.values;
    std::sort(vals.begin(), vals.end());
    REQUIRE(vals[0] == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(vals[1] == Catch::Approx(3.0).margin(1e-12));
}
