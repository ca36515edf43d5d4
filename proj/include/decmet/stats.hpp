#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "decmet/errors.hpp"
#include "decmet/model.hpp"

namespace decmet::stats {

// ---- dense matrix -------------------------------------------------------

class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    const std::vector<double>& data() const { return data_; }

    bool operator==(const Matrix&) const = default;

  private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw Error("matmul dimension mismatch");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            double v = a(i, k);
            if (v == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += v * b(k, j);
        }
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

// Gauss-Jordan with partial pivoting; nullopt when numerically singular.
inline std::optional<Matrix> try_invert(Matrix a) {
    if (a.rows() != a.cols()) throw Error("cannot invert a non-square matrix");
    std::size_t n = a.rows();
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::abs(a(i, j)));
    if (scale == 0.0 || !std::isfinite(scale)) return std::nullopt;
    const double tol = scale * 1e-12;

    Matrix inv = Matrix::identity(n);
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
        if (std::abs(a(pivot, col)) <= tol) return std::nullopt;
        if (pivot != col) {
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(a(pivot, j), a(col, j));
                std::swap(inv(pivot, j), inv(col, j));
            }
        }
        double d = a(col, col);
        for (std::size_t j = 0; j < n; ++j) {
            a(col, j) /= d;
            inv(col, j) /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            double f = a(r, col);
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                a(r, j) -= f * a(col, j);
                inv(r, j) -= f * inv(col, j);
            }
        }
    }
    return inv;
}

// ---- aligned series -----------------------------------------------------

// Column-aligned metric series: one row per snapshot, no missing cells.
struct DataMatrix {
    std::vector<std::string> columns;
    std::vector<Instant> rows;
    std::vector<double> values;  // row-major, rows.size() x columns.size()

    std::size_t n_rows() const { return rows.size(); }
    std::size_t n_cols() const { return columns.size(); }

    double at(std::size_t r, std::size_t c) const { return values[r * columns.size() + c]; }
    double& at(std::size_t r, std::size_t c) { return values[r * columns.size() + c]; }

    std::vector<double> column(std::size_t c) const {
        std::vector<double> out(n_rows());
        for (std::size_t r = 0; r < n_rows(); ++r) out[r] = at(r, c);
        return out;
    }
};

inline void require_analyzable(const DataMatrix& m) {
    if (m.n_rows() < 3) throw Error("need at least 3 aligned snapshots, have " +
                                    std::to_string(m.n_rows()));
    if (m.n_cols() < 2)
        throw Error("need at least 2 series, have " + std::to_string(m.n_cols()));
}

// Inner join on snapshot times.
inline DataMatrix align_series(std::span<const MetricSeries> series) {
    DataMatrix out;
    if (series.empty()) return out;
    std::set<std::string> names;
    for (const auto& s : series)
        if (!names.insert(s.metric_name).second)
            throw Error("duplicate series name '" + s.metric_name + "'");

    std::map<Instant, std::size_t> hits;
    std::vector<std::map<Instant, double>> lookup;
    lookup.reserve(series.size());
    for (const auto& s : series) {
        std::map<Instant, double> m;
        for (const auto& p : s.points) m.emplace(p.snapshot, p.value);
        for (const auto& [t, v] : m) {
            (void)v;
            ++hits[t];
        }
        lookup.push_back(std::move(m));
    }
    for (const auto& [t, k] : hits)
        if (k == series.size()) out.rows.push_back(t);
    for (const auto& s : series) out.columns.push_back(s.metric_name);
    out.values.resize(out.rows.size() * out.columns.size());
    for (std::size_t r = 0; r < out.rows.size(); ++r)
        for (std::size_t c = 0; c < out.columns.size(); ++c)
            out.at(r, c) = lookup[c].at(out.rows[r]);
    return out;
}

// ---- ranks and Spearman -------------------------------------------------

// Average-of-tied (fractional) ranks, 1-based.
inline std::vector<double> fractional_ranks(std::span<const double> x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        double avg = (double(i) + double(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

// Spearman rank correlation: Pearson over fractional ranks. Exact 1/-1 for
// strictly monotone pairs because equal rank vectors cancel exactly.
inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw Error("spearman: series lengths differ");
    if (x.size() < 3) throw Error("spearman: need at least 3 aligned points");
    auto rx = fractional_ranks(x);
    auto ry = fractional_ranks(y);
    double mean = double(x.size() + 1) / 2.0;  // rank sums are invariant under ties
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        double dx = rx[i] - mean, dy = ry[i] - mean;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0) throw ConstantSeriesError("spearman: first series is constant");
    if (syy == 0.0) throw ConstantSeriesError("spearman: second series is constant");
    return sxy / std::sqrt(sxx * syy);
}

// ---- outliers -----------------------------------------------------------

inline double mean_of(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s / double(x.size());
}

inline double population_sd(std::span<const double> x, double mean) {
    double s = 0.0;
    for (double v : x) s += (v - mean) * (v - mean);
    return std::sqrt(s / double(x.size()));
}

// Indices farther than 3 population standard deviations from the mean.
inline std::vector<std::size_t> detect_outliers(std::span<const double> x) {
    if (x.size() < 3) throw Error("outlier detection needs at least 3 points");
    double m = mean_of(x);
    double sd = population_sd(x, m);
    std::vector<std::size_t> out;
    if (sd == 0.0) return out;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (std::abs(x[i] - m) > 3.0 * sd) out.push_back(i);
    return out;
}

// ---- Box-Cox ------------------------------------------------------------

struct BoxCoxResult {
    std::vector<double> values;
    double lambda = 1.0;
    double shift = 0.0;  // added to every input before transforming
};

namespace detail {

inline std::vector<double> boxcox_apply(std::span<const double> x, double lambda) {
    std::vector<double> y(x.size());
    if (lambda == 0.0) {
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::log(x[i]);
    } else {
        for (std::size_t i = 0; i < x.size(); ++i)
            y[i] = (std::pow(x[i], lambda) - 1.0) / lambda;
    }
    return y;
}

inline double boxcox_loglik(std::span<const double> x, double sum_log_x, double lambda) {
    auto y = boxcox_apply(x, lambda);
    double m = mean_of(y);
    double var = 0.0;
    for (double v : y) var += (v - m) * (v - m);
    var /= double(y.size());
    if (!(var > 0.0) || !std::isfinite(var)) return -std::numeric_limits<double>::infinity();
    return -0.5 * double(x.size()) * std::log(var) + (lambda - 1.0) * sum_log_x;
}

}  // namespace detail

// Power transform y = (x^λ − 1)/λ (ln x at λ = 0). With λ unset, the
// log-likelihood is maximized over λ ∈ [−5, 5] by golden-section search to a
// bracket width of 1e-4. Nonpositive inputs shift by 1 − min when allowed.
inline BoxCoxResult box_cox(std::span<const double> x, std::optional<double> lambda,
                            bool allow_shift = true) {
    if (x.empty()) throw Error("box_cox: empty series");
    BoxCoxResult res;
    double min_x = *std::min_element(x.begin(), x.end());
    std::vector<double> xs(x.begin(), x.end());
    if (min_x <= 0.0) {
        if (!allow_shift)
            throw NonPositiveDataError("box_cox: values must be positive (shifting disabled)");
        res.shift = 1.0 - min_x;
        for (double& v : xs) v += res.shift;
    }
    if (lambda) {
        res.lambda = *lambda;
        res.values = detail::boxcox_apply(xs, res.lambda);
        return res;
    }
    double max_x = *std::max_element(xs.begin(), xs.end());
    double min_s = *std::min_element(xs.begin(), xs.end());
    if (max_x == min_s) {  // constant input: likelihood is degenerate everywhere
        res.lambda = 1.0;
        res.values = detail::boxcox_apply(xs, res.lambda);
        return res;
    }
    double sum_log = 0.0;
    for (double v : xs) sum_log += std::log(v);

    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = -5.0, b = 5.0;
    double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
    double fc = detail::boxcox_loglik(xs, sum_log, c);
    double fd = detail::boxcox_loglik(xs, sum_log, d);
    while (b - a > 1e-4) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = detail::boxcox_loglik(xs, sum_log, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = detail::boxcox_loglik(xs, sum_log, d);
        }
    }
    res.lambda = (a + b) / 2.0;
    res.values = detail::boxcox_apply(xs, res.lambda);
    return res;
}

// ---- correlation & adequacy ---------------------------------------------

// Pearson correlation of the columns; throws on constant columns because
// correlations with them are undefined.
inline Matrix pearson_correlation(const DataMatrix& m) {
    std::size_t n = m.n_rows(), p = m.n_cols();
    if (n < 2) throw Error("correlation needs at least 2 rows");
    Matrix centered(n, p);
    std::vector<double> norm(p);
    for (std::size_t c = 0; c < p; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < n; ++r) mean += m.at(r, c);
        mean /= double(n);
        double ss = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            double d = m.at(r, c) - mean;
            centered(r, c) = d;
            ss += d * d;
        }
        if (ss == 0.0)
            throw ConstantSeriesError("column '" + m.columns[c] + "' is constant");
        norm[c] = std::sqrt(ss);
    }
    Matrix R(p, p);
    for (std::size_t i = 0; i < p; ++i) {
        R(i, i) = 1.0;
        for (std::size_t j = i + 1; j < p; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r) s += centered(r, i) * centered(r, j);
            double v = s / (norm[i] * norm[j]);
            R(i, j) = R(j, i) = v;
        }
    }
    return R;
}

// Kaiser-Meyer-Olkin sampling adequacy from a correlation matrix. Anti-image
// partial correlations come from the inverse; near-singular matrices get a
// 1e-8 ridge before giving up.
inline double kmo_from_correlation(const Matrix& R) {
    std::size_t p = R.rows();
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j)
            if (!std::isfinite(R(i, j)))
                throw SingularCorrelationError("correlation matrix has non-finite entries");
    auto inv = try_invert(R);
    if (!inv) {
        Matrix ridged = R;
        for (std::size_t i = 0; i < p; ++i) ridged(i, i) += 1e-8;
        inv = try_invert(ridged);
        if (!inv)
            throw SingularCorrelationError(
                "correlation matrix is singular even after ridge regularization");
    }
    const Matrix& P = *inv;
    double sum_r2 = 0.0, sum_u2 = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
        if (!(P(i, i) > 0.0))
            throw SingularCorrelationError("anti-image diagonal is not positive");
        for (std::size_t j = 0; j < p; ++j) {
            if (i == j) continue;
            double u = -P(i, j) / std::sqrt(P(i, i) * P(j, j));
            sum_r2 += R(i, j) * R(i, j);
            sum_u2 += u * u;
        }
    }
    double denom = sum_r2 + sum_u2;
    if (denom == 0.0) return 0.0;  // diagonal R: no correlation structure at all
    return std::clamp(sum_r2 / denom, 0.0, 1.0);
}

inline double kmo(const DataMatrix& m) { return kmo_from_correlation(pearson_correlation(m)); }

// ---- symmetric eigendecomposition ---------------------------------------

struct EigenResult {
    std::vector<double> values;  // descending
    Matrix vectors;              // columns match values
};

// Cyclic Jacobi rotations. Deterministic sweep order; converged when every
// off-diagonal magnitude drops below `tol`.
inline EigenResult eigen_symmetric(const Matrix& input, int max_sweeps = 100,
                                   double tol = 1e-12) {
    if (input.rows() != input.cols()) throw Error("eigen_symmetric: matrix not square");
    std::size_t n = input.rows();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(input(i, j) - input(j, i)) > 1e-10)
                throw Error("eigen_symmetric: matrix not symmetric");

    Matrix a = input;
    Matrix v = Matrix::identity(n);
    auto max_offdiag = [&]() {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) m = std::max(m, std::abs(a(i, j)));
        return m;
    };

    bool converged = n < 2 || max_offdiag() < tol;
    for (int sweep = 0; !converged && sweep < max_sweeps; ++sweep) {
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = a(p, q);
                if (apq == 0.0) continue;
                double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                double app = a(p, p), aqq = a(q, q);
                a(p, p) = app - t * apq;
                a(q, q) = aqq + t * apq;
                a(p, q) = a(q, p) = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (i == p || i == q) continue;
                    double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = a(p, i) = c * aip - s * aiq;
                    a(i, q) = a(q, i) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double vip = v(i, p), viq = v(i, q);
                    v(i, p) = c * vip - s * viq;
                    v(i, q) = s * vip + c * viq;
                }
            }
        }
        converged = max_offdiag() < tol;
    }
    if (!converged) throw NoConvergenceError("Jacobi eigendecomposition did not converge");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
    EigenResult res;
    res.values.resize(n);
    res.vectors = Matrix(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        res.values[k] = a(order[k], order[k]);
        for (std::size_t i = 0; i < n; ++i) res.vectors(i, k) = v(i, order[k]);
    }
    return res;
}

// Kaiser criterion: factors worth keeping have eigenvalues strictly above 1.
inline std::size_t kaiser_count(std::span<const double> eigenvalues) {
    std::size_t k = 0;
    for (double v : eigenvalues)
        if (v > 1.0) ++k;
    return k;
}

// ---- factor analysis ----------------------------------------------------

enum class Rotation { none, varimax, promax };

inline const char* to_string(Rotation r) {
    switch (r) {
        case Rotation::none: return "none";
        case Rotation::varimax: return "varimax";
        default: return "promax";
    }
}

inline Rotation rotation_from(std::string_view s) {
    if (s == "none") return Rotation::none;
    if (s == "varimax") return Rotation::varimax;
    if (s == "promax") return Rotation::promax;
    throw ConfigError("unknown rotation '" + std::string{s} + "'");
}

struct VarimaxResult {
    Matrix loadings;
    Matrix rotation;  // loadings = input · rotation
};

// Kaiser-normalized varimax via pairwise planar rotations.
inline VarimaxResult varimax(const Matrix& input, double eps = 1e-6, int max_sweeps = 1000) {
    std::size_t p = input.rows(), k = input.cols();
    VarimaxResult res{input, Matrix::identity(k)};
    if (k < 2) return res;

    std::vector<double> h(p);
    Matrix w = input;
    for (std::size_t i = 0; i < p; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < k; ++j) ss += w(i, j) * w(i, j);
        h[i] = std::sqrt(ss);
        if (h[i] > 0.0)
            for (std::size_t j = 0; j < k; ++j) w(i, j) /= h[i];
    }

    Matrix rot = Matrix::identity(k);
    bool converged = false;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        double max_angle = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t l = j + 1; l < k; ++l) {
                double A = 0.0, B = 0.0, C = 0.0, D = 0.0;
                for (std::size_t i = 0; i < p; ++i) {
                    double u = w(i, j) * w(i, j) - w(i, l) * w(i, l);
                    double v2 = 2.0 * w(i, j) * w(i, l);
                    A += u;
                    B += v2;
                    C += u * u - v2 * v2;
                    D += 2.0 * u * v2;
                }
                double num = D - 2.0 * A * B / double(p);
                double den = C - (A * A - B * B) / double(p);
                if (num == 0.0 && den == 0.0) continue;
                double phi = 0.25 * std::atan2(num, den);
                max_angle = std::max(max_angle, std::abs(phi));
                if (std::abs(phi) < 1e-15) continue;
                double c = std::cos(phi), s = std::sin(phi);
                for (std::size_t i = 0; i < p; ++i) {
                    double wj = w(i, j), wl = w(i, l);
                    w(i, j) = c * wj + s * wl;
                    w(i, l) = -s * wj + c * wl;
                }
                for (std::size_t i = 0; i < k; ++i) {
                    double rj = rot(i, j), rl = rot(i, l);
                    rot(i, j) = c * rj + s * rl;
                    rot(i, l) = -s * rj + c * rl;
                }
            }
        }
        converged = max_angle < eps;
    }
    if (!converged) throw NoConvergenceError("varimax rotation did not converge");

    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < k; ++j) w(i, j) *= h[i];
    res.loadings = std::move(w);
    res.rotation = std::move(rot);
    return res;
}

struct PromaxResult {
    Matrix pattern;
    Matrix factor_correlations;
};

// Oblique promax: power-`power` target regressed onto the varimax solution,
// columns rescaled so the implied factors have unit variance.
inline PromaxResult promax(const Matrix& varimax_loadings, double power = 4.0) {
    const Matrix& x = varimax_loadings;
    std::size_t p = x.rows(), k = x.cols();
    Matrix q(p, k);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < k; ++j)
            q(i, j) = x(i, j) * std::pow(std::abs(x(i, j)), power - 1.0);

    Matrix xt = transpose(x);
    auto xtx_inv = try_invert(matmul(xt, x));
    if (!xtx_inv) throw SingularCorrelationError("promax: degenerate varimax loadings");
    Matrix u = matmul(*xtx_inv, matmul(xt, q));

    auto utu_inv = try_invert(matmul(transpose(u), u));
    if (!utu_inv) throw SingularCorrelationError("promax: degenerate target transform");
    for (std::size_t j = 0; j < k; ++j) {
        double d = std::sqrt((*utu_inv)(j, j));
        for (std::size_t i = 0; i < k; ++i) u(i, j) *= d;
    }
    auto phi = try_invert(matmul(transpose(u), u));
    if (!phi) throw SingularCorrelationError("promax: factor correlation matrix is singular");
    return {matmul(x, u), std::move(*phi)};
}

struct FactorModel {
    Matrix correlation;
    std::vector<double> eigenvalues;  // spectrum of the full correlation matrix
    std::size_t n_factors = 0;
    Matrix loadings;  // variables x factors
    Rotation rotation = Rotation::none;
    std::optional<Matrix> factor_correlations;  // promax only
    bool heywood = false;
    std::size_t iterations = 0;
};

namespace detail {

// Fix column signs (largest |loading| positive) and order columns by
// explained variance; factor correlations are permuted and flipped to match.
inline void canonicalize(Matrix& loadings, std::optional<Matrix>& phi) {
    std::size_t p = loadings.rows(), k = loadings.cols();
    for (std::size_t j = 0; j < k; ++j) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < p; ++i)
            if (std::abs(loadings(i, j)) > std::abs(loadings(best, j))) best = i;
        if (loadings(best, j) < 0.0) {
            for (std::size_t i = 0; i < p; ++i) loadings(i, j) = -loadings(i, j);
            if (phi) {
                for (std::size_t i = 0; i < k; ++i) {
                    (*phi)(j, i) = -(*phi)(j, i);
                    (*phi)(i, j) = -(*phi)(i, j);
                }
            }
        }
    }
    std::vector<double> ss(k, 0.0);
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t i = 0; i < p; ++i) ss[j] += loadings(i, j) * loadings(i, j);
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return ss[a] > ss[b]; });
    Matrix sorted(p, k);
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t i = 0; i < p; ++i) sorted(i, j) = loadings(i, order[j]);
    loadings = std::move(sorted);
    if (phi) {
        Matrix ph(k, k);
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) ph(a, b) = (*phi)(order[a], order[b]);
        phi = std::move(ph);
    }
}

}  // namespace detail

// Principal-axis factoring with the requested rotation. Initial
// communalities are squared multiple correlations; the reduced correlation
// matrix is re-decomposed until communalities settle.
inline FactorModel efa(const DataMatrix& m, std::size_t n_factors,
                       Rotation rotation = Rotation::promax, double promax_power = 4.0,
                       Warnings* warnings = nullptr) {
    require_analyzable(m);
    std::size_t p = m.n_cols();
    if (n_factors < 1 || n_factors > p - 1)
        throw Error("n_factors must lie in [1, " + std::to_string(p - 1) + "]");

    FactorModel model;
    model.rotation = rotation;
    model.n_factors = n_factors;
    model.correlation = pearson_correlation(m);
    model.eigenvalues = eigen_symmetric(model.correlation).values;

    auto r_inv = try_invert(model.correlation);
    if (!r_inv)
        throw SingularCorrelationError(
            "correlation matrix is singular; check for duplicated or collinear series");
    std::vector<double> h(p);
    for (std::size_t i = 0; i < p; ++i) h[i] = 1.0 - 1.0 / (*r_inv)(i, i);

    Matrix loadings(p, n_factors);
    bool heywood_seen = false;
    bool converged = false;
    std::size_t iter = 0;
    for (; iter < 200 && !converged; ++iter) {
        Matrix reduced = model.correlation;
        for (std::size_t i = 0; i < p; ++i) reduced(i, i) = h[i];
        EigenResult eig = eigen_symmetric(reduced);
        for (std::size_t j = 0; j < n_factors; ++j) {
            double scale = std::sqrt(std::max(eig.values[j], 0.0));
            for (std::size_t i = 0; i < p; ++i) loadings(i, j) = eig.vectors(i, j) * scale;
        }
        double delta = 0.0;
        for (std::size_t i = 0; i < p; ++i) {
            double hn = 0.0;
            for (std::size_t j = 0; j < n_factors; ++j) hn += loadings(i, j) * loadings(i, j);
            if (hn > 1.0) {
                heywood_seen = true;
                hn = 1.0 - 1e-6;
            }
            delta = std::max(delta, std::abs(hn - h[i]));
            h[i] = hn;
        }
        converged = delta < 1e-6;
    }
    if (!converged)
        throw NoConvergenceError("principal-axis factoring did not converge in 200 iterations");
    model.iterations = iter;
    model.heywood = heywood_seen;
    if (heywood_seen)
        warn(warnings, "Heywood case: communality exceeded 1 and was clamped to 1 - 1e-6");

    std::optional<Matrix> phi;
    Matrix final_loadings = loadings;
    if (rotation == Rotation::varimax) {
        final_loadings = varimax(loadings).loadings;
    } else if (rotation == Rotation::promax) {
        PromaxResult pm = promax(varimax(loadings).loadings, promax_power);
        final_loadings = std::move(pm.pattern);
        phi = std::move(pm.factor_correlations);
    }
    detail::canonicalize(final_loadings, phi);
    model.loadings = std::move(final_loadings);
    model.factor_correlations = std::move(phi);
    return model;
}

// ---- correlation reports --------------------------------------------------

// Cut points 0.3 / 0.5 / 0.7 / 0.9 on |rho|.
inline const char* correlation_strength(double rho) {
    double a = std::abs(rho);
    if (a < 0.3) return "negligible";
    if (a < 0.5) return "low";
    if (a < 0.7) return "moderate";
    if (a < 0.9) return "high";
    return "very high";
}

struct CorrelationReport {
    std::vector<std::string> columns;       // analyzed columns
    Matrix rho;                             // Spearman, unit diagonal
    std::vector<std::string> excluded_constant;
    std::size_t n_rows = 0;
};

// Pairwise Spearman over the matrix columns; constant columns are excluded
// and reported rather than failing the whole grid.
inline CorrelationReport spearman_matrix(const DataMatrix& m) {
    if (m.n_rows() < 3) throw Error("need at least 3 aligned snapshots");
    CorrelationReport rep;
    rep.n_rows = m.n_rows();
    std::vector<std::vector<double>> cols;
    for (std::size_t c = 0; c < m.n_cols(); ++c) {
        auto col = m.column(c);
        bool constant = std::all_of(col.begin(), col.end(),
                                    [&](double v) { return v == col.front(); });
        if (constant) {
            rep.excluded_constant.push_back(m.columns[c]);
        } else {
            rep.columns.push_back(m.columns[c]);
            cols.push_back(std::move(col));
        }
    }
    if (rep.columns.size() < 2)
        throw Error("need at least 2 non-constant series for a correlation matrix");
    std::size_t p = rep.columns.size();
    rep.rho = Matrix(p, p);
    for (std::size_t i = 0; i < p; ++i) {
        rep.rho(i, i) = 1.0;
        for (std::size_t j = i + 1; j < p; ++j) {
            double r = spearman(cols[i], cols[j]);
            rep.rho(i, j) = rep.rho(j, i) = r;
        }
    }
    return rep;
}

// ---- the Appendix-style EFA pipeline --------------------------------------

enum class OutlierTreatment { drop, winsorize, transform_only };

inline const char* to_string(OutlierTreatment t) {
    switch (t) {
        case OutlierTreatment::drop: return "drop";
        case OutlierTreatment::winsorize: return "winsorize";
        default: return "transform_only";
    }
}

inline OutlierTreatment outlier_treatment_from(std::string_view s) {
    if (s == "drop") return OutlierTreatment::drop;
    if (s == "winsorize") return OutlierTreatment::winsorize;
    if (s == "transform_only") return OutlierTreatment::transform_only;
    throw ConfigError("unknown outlier treatment '" + std::string{s} + "'");
}

struct EfaOptions {
    OutlierTreatment treatment = OutlierTreatment::transform_only;
    bool use_box_cox = true;
    Rotation rotation = Rotation::promax;
    double promax_power = 4.0;
    bool force = false;                       // run even when KMO <= 0.5
    std::optional<std::size_t> n_factors;     // override Kaiser retention
};

struct ColumnTransform {
    std::string column;
    double lambda = 1.0;
    double shift = 0.0;
    std::size_t outliers = 0;
};

struct EfaRun {
    DataMatrix processed;
    double kmo = 0.0;
    std::vector<double> eigenvalues;
    std::size_t n_factors = 0;
    FactorModel model;
    std::vector<ColumnTransform> transforms;
    std::vector<std::string> log;
};

// Fixed processing order: outlier treatment, transformation, adequacy,
// retention, extraction, rotation. The adequacy gate refuses KMO <= 0.5
// unless forced.
inline EfaRun run_efa_pipeline(const DataMatrix& input, const EfaOptions& opts,
                               Warnings* warnings = nullptr) {
    require_analyzable(input);
    EfaRun run;
    run.processed = input;
    DataMatrix& m = run.processed;

    // 1. outliers
    std::set<std::size_t> drop_rows;
    for (std::size_t c = 0; c < m.n_cols(); ++c) {
        auto col = m.column(c);
        auto idx = detect_outliers(col);
        ColumnTransform t;
        t.column = m.columns[c];
        t.outliers = idx.size();
        run.transforms.push_back(t);
        if (idx.empty()) continue;
        switch (opts.treatment) {
            case OutlierTreatment::drop:
                drop_rows.insert(idx.begin(), idx.end());
                run.log.push_back("column " + m.columns[c] + ": dropping " +
                                  std::to_string(idx.size()) + " outlier row(s)");
                break;
            case OutlierTreatment::winsorize: {
                double mean = mean_of(col);
                double sd = population_sd(col, mean);
                for (std::size_t i : idx)
                    m.at(i, c) = std::clamp(m.at(i, c), mean - 3.0 * sd, mean + 3.0 * sd);
                run.log.push_back("column " + m.columns[c] + ": winsorized " +
                                  std::to_string(idx.size()) + " value(s) at 3 sd");
                break;
            }
            case OutlierTreatment::transform_only:
                run.log.push_back("column " + m.columns[c] + ": " + std::to_string(idx.size()) +
                                  " outlier(s) noted; relying on transformation");
                break;
        }
    }
    if (!drop_rows.empty()) {
        DataMatrix kept;
        kept.columns = m.columns;
        for (std::size_t r = 0; r < m.n_rows(); ++r) {
            if (drop_rows.count(r)) continue;
            kept.rows.push_back(m.rows[r]);
            for (std::size_t c = 0; c < m.n_cols(); ++c) kept.values.push_back(m.at(r, c));
        }
        m = std::move(kept);
        if (m.n_rows() < 3) throw Error("fewer than 3 rows remain after outlier removal");
    }

    // 2. transformation
    if (opts.use_box_cox) {
        for (std::size_t c = 0; c < m.n_cols(); ++c) {
            auto col = m.column(c);
            BoxCoxResult bc = box_cox(col, std::nullopt, true);
            for (std::size_t r = 0; r < m.n_rows(); ++r) m.at(r, c) = bc.values[r];
            run.transforms[c].lambda = bc.lambda;
            run.transforms[c].shift = bc.shift;
            run.log.push_back("column " + m.columns[c] + ": box-cox lambda " +
                              std::to_string(bc.lambda) +
                              (bc.shift != 0.0 ? " (shift " + std::to_string(bc.shift) + ")"
                                               : std::string{}));
        }
    }

    // 3. adequacy
    run.kmo = kmo(m);
    run.log.push_back("kmo " + std::to_string(run.kmo));
    if (run.kmo <= 0.5) {
        if (!opts.force)
            throw AdequacyError("sampling adequacy insufficient: KMO = " +
                                std::to_string(run.kmo) + " (<= 0.5); pass force to override");
        run.log.push_back("adequacy gate overridden by force");
        warn(warnings, "running factor analysis despite KMO <= 0.5");
    }

    // 4. retention
    Matrix r = pearson_correlation(m);
    run.eigenvalues = eigen_symmetric(r).values;
    std::size_t k = opts.n_factors ? *opts.n_factors : kaiser_count(run.eigenvalues);
    if (k == 0)
        throw AdequacyError("Kaiser criterion retains no factor (no eigenvalue above 1)");
    run.n_factors = k;
    run.log.push_back("retaining " + std::to_string(k) + " factor(s)");

    // 5-6. extraction + rotation
    run.model = efa(m, k, opts.rotation, opts.promax_power, warnings);
    return run;
}

}  // namespace decmet::stats
