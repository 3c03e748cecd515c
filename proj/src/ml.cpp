#include "spoilcal/ml.hpp"

#include "spoilcal/error.hpp"
#include "spoilcal/parallel.hpp"
#include "spoilcal/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

namespace spoilcal::ml {

using nlohmann::json;

namespace {

constexpr double kTau = 1e-12;

void check_binary(const std::vector<int>& y, std::size_t n, const char* who) {
    if (y.size() != n) throw Error(std::string(who) + ": label count does not match rows");
    bool seen[2] = {false, false};
    for (int v : y) {
        if (v != 0 && v != 1) throw Error(std::string(who) + ": labels must be binary (0/1)");
        seen[v] = true;
    }
    if (!seen[0] || !seen[1]) throw Error(std::string(who) + ": both classes must be present in the training data");
}

Matrix select_columns(const Matrix& X, const std::vector<std::size_t>& cols) {
    Matrix out(X.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = X.col(static_cast<Eigen::Index>(cols[j]));
    return out;
}

int argmax2(double a, double b) { return b > a ? 1 : 0; }

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json r = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
        rows.push_back(std::move(r));
    }
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

Matrix matrix_from_json(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    Matrix m(rows, cols);
    const json& data = j.at("data");
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = data.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k)).get<double>();
    return m;
}

json vector_to_json(const Vector& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

Vector vector_from_json(const json& j) {
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j.at(i).get<double>();
    return v;
}

json lda_to_json(const LdaModel& m) {
    return {{"coef", matrix_to_json(m.coef)}, {"intercept", vector_to_json(m.intercept)}, {"means", matrix_to_json(m.means)}};
}

LdaModel lda_from_json(const json& j) {
    return {matrix_from_json(j.at("coef")), vector_from_json(j.at("intercept")), matrix_from_json(j.at("means"))};
}

} // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
    Dataset d;
    d.columns = columns;
    d.X.resize(static_cast<Eigen::Index>(idx.size()), X.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        d.X.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(idx[i]));
        if (!y.empty()) d.y.push_back(y[idx[i]]);
        if (!groups.empty()) d.groups.push_back(groups[idx[i]]);
    }
    return d;
}

Dataset from_table(const features::FeatureTable& table) {
    Dataset d;
    d.columns = table.columns;
    d.X.resize(static_cast<Eigen::Index>(table.row_count()), static_cast<Eigen::Index>(table.columns.size()));
    for (std::size_t i = 0; i < table.row_count(); ++i) {
        for (std::size_t j = 0; j < table.columns.size(); ++j) {
            d.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = table.rows[i][j];
        }
    }
    d.y.assign(table.row_count(), 0);
    for (const auto& k : table.keys) d.groups.push_back(k.scene_id + "#" + std::to_string(k.segment_id));
    return d;
}

Dataset from_labeled(const features::LabeledTable& table) {
    Dataset d = from_table(table.table);
    for (std::size_t i = 0; i < table.labels.size(); ++i) d.y[i] = table.labels[i] == synth::Category::Cat1 ? 0 : 1;
    d.groups = table.pile_ids;
    return d;
}

Imputer fit_imputer(const Matrix& X) {
    Imputer imp;
    imp.median = Vector::Zero(X.cols());
    std::vector<double> col;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        col.clear();
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            if (!std::isnan(X(i, j))) col.push_back(X(i, j));
        }
        if (col.empty()) continue;
        std::sort(col.begin(), col.end());
        const std::size_t n = col.size();
        imp.median(j) = n % 2 ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]);
    }
    return imp;
}

Matrix apply_imputer(const Imputer& imp, const Matrix& X) {
    Matrix out = X;
    for (Eigen::Index j = 0; j < out.cols(); ++j)
        for (Eigen::Index i = 0; i < out.rows(); ++i)
            if (std::isnan(out(i, j))) out(i, j) = imp.median(j);
    return out;
}

Standardizer fit_standardizer(const Matrix& X) {
    if (X.rows() == 0 || X.cols() == 0) throw Error("fit_standardizer: empty matrix");
    Standardizer s;
    const auto n = static_cast<double>(X.rows());
    s.mean = X.colwise().sum().transpose() / n;
    s.std = Vector::Zero(X.cols());
    s.constant.assign(static_cast<std::size_t>(X.cols()), false);
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const double ss = (X.col(j).array() - s.mean(j)).square().sum();
        s.std(j) = std::sqrt(ss / n);
        // Relative guard: float-derived constant columns leave rounding noise.
        if (!(s.std(j) > 1e-12 * std::max(1.0, std::fabs(s.mean(j))))) s.constant[static_cast<std::size_t>(j)] = true;
    }
    return s;
}

Matrix apply_standardizer(const Standardizer& s, const Matrix& X) {
    if (X.cols() != s.mean.size()) throw SchemaError("apply_standardizer: column count mismatch");
    Matrix out(X.rows(), X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        if (s.constant[static_cast<std::size_t>(j)]) {
            out.col(j).setZero();
        } else {
            out.col(j) = (X.col(j).array() - s.mean(j)) / s.std(j);
        }
    }
    return out;
}

LdaModel fit_lda(const Matrix& X, const std::vector<int>& y, double ridge) {
    check_binary(y, static_cast<std::size_t>(X.rows()), "train_lda");
    const Eigen::Index d = X.cols();
    LdaModel m;
    m.means = Matrix::Zero(2, d);
    double counts[2] = {0.0, 0.0};
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        m.means.row(y[static_cast<std::size_t>(i)]) += X.row(i);
        counts[y[static_cast<std::size_t>(i)]] += 1.0;
    }
    m.means.row(0) /= counts[0];
    m.means.row(1) /= counts[1];
    Matrix centered = X;
    for (Eigen::Index i = 0; i < X.rows(); ++i) centered.row(i) -= m.means.row(y[static_cast<std::size_t>(i)]);
    Matrix cov = (centered.transpose() * centered) / static_cast<double>(X.rows());
    cov.diagonal().array() += ridge;
    const Eigen::LDLT<Matrix> ldlt(cov);
    if (ldlt.info() != Eigen::Success) throw DegenerateError("train_lda: covariance factorization failed");
    m.coef = ldlt.solve(m.means.transpose());
    m.intercept.resize(2);
    const double n = counts[0] + counts[1];
    for (int k = 0; k < 2; ++k) {
        m.intercept(k) = -0.5 * m.means.row(k).dot(m.coef.col(k)) + std::log(counts[k] / n);
    }
    return m;
}

Matrix lda_posteriors(const LdaModel& m, const Matrix& X) {
    Matrix scores = X * m.coef;
    scores.rowwise() += m.intercept.transpose();
    Matrix post(X.rows(), 2);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const double mx = std::max(scores(i, 0), scores(i, 1));
        const double e0 = std::exp(scores(i, 0) - mx), e1 = std::exp(scores(i, 1) - mx);
        post(i, 0) = e0 / (e0 + e1);
        post(i, 1) = e1 / (e0 + e1);
    }
    return post;
}

SubspaceModel fit_subspace(const Matrix& X, const std::vector<int>& y, std::size_t n_learners, std::size_t subspace_dim,
                           std::uint64_t seed, double ridge) {
    const auto d = static_cast<std::size_t>(X.cols());
    if (d < 1) throw Error("train_subspace_discriminant: no feature columns");
    if (subspace_dim == 0) subspace_dim = (d + 1) / 2;
    if (subspace_dim > d) {
        throw Error("train_subspace_discriminant: subspace_dim " + std::to_string(subspace_dim) + " exceeds " +
                    std::to_string(d) + " columns");
    }
    if (n_learners < 1) throw Error("train_subspace_discriminant: n_learners must be >= 1");
    SubspaceModel m;
    std::vector<std::size_t> pool(d);
    for (std::size_t l = 0; l < n_learners; ++l) {
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        Rng rng = Rng::stream(seed, {0x53554253, l});
        for (std::size_t i = 0; i < subspace_dim; ++i) std::swap(pool[i], pool[i + rng.below(d - i)]);
        std::vector<std::size_t> cols(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(subspace_dim));
        std::sort(cols.begin(), cols.end());
        m.learners.push_back(fit_lda(select_columns(X, cols), y, ridge));
        m.subsets.push_back(std::move(cols));
    }
    return m;
}

Matrix subspace_posteriors(const SubspaceModel& m, const Matrix& X) {
    Matrix acc = Matrix::Zero(X.rows(), 2);
    for (std::size_t l = 0; l < m.learners.size(); ++l) acc += lda_posteriors(m.learners[l], select_columns(X, m.subsets[l]));
    return acc / static_cast<double>(m.learners.size());
}

double quadratic_kernel(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v, double gamma) {
    const double t = 1.0 + gamma * u.dot(v);
    return t * t;
}

Matrix quadratic_gram(const Matrix& A, const Matrix& B, double gamma) {
    Matrix g = gamma * (A * B.transpose());
    g.array() += 1.0;
    return g.array().square();
}

SmoResult solve_smo(const Matrix& K, const std::vector<int>& y, double C, double tol, std::size_t max_iter) {
    const auto n = static_cast<Eigen::Index>(y.size());
    Vector alpha = Vector::Zero(n);
    Vector G = Vector::Constant(n, -1.0); // gradient of 1/2 a'Qa - e'a
    auto yd = [&](Eigen::Index i) { return static_cast<double>(y[static_cast<std::size_t>(i)]); };
    auto Q = [&](Eigen::Index i, Eigen::Index j) { return yd(i) * yd(j) * K(i, j); };
    auto upper = [&](Eigen::Index i) { return alpha(i) >= C; };
    auto lower = [&](Eigen::Index i) { return alpha(i) <= 0.0; };

    SmoResult res;
    for (;;) {
        // i maximizes -y G over I_up; j minimizes the second-order gain over I_low.
        double gmax = -std::numeric_limits<double>::infinity(), gmax2 = -std::numeric_limits<double>::infinity();
        Eigen::Index i = -1, j = -1;
        for (Eigen::Index t = 0; t < n; ++t) {
            if (y[static_cast<std::size_t>(t)] == 1) {
                if (!upper(t) && -G(t) >= gmax) { gmax = -G(t); i = t; }
            } else {
                if (!lower(t) && G(t) >= gmax) { gmax = G(t); i = t; }
            }
        }
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index t = 0; t < n && i >= 0; ++t) {
            if (y[static_cast<std::size_t>(t)] == 1) {
                if (lower(t)) continue;
                const double diff = gmax + G(t);
                gmax2 = std::max(gmax2, G(t));
                if (diff > 0.0) {
                    double quad = K(i, i) + K(t, t) - 2.0 * yd(i) * K(i, t);
                    if (quad <= 0.0) quad = kTau;
                    const double obj = -(diff * diff) / quad;
                    if (obj <= best) { best = obj; j = t; }
                }
            } else {
                if (upper(t)) continue;
                const double diff = gmax - G(t);
                gmax2 = std::max(gmax2, -G(t));
                if (diff > 0.0) {
                    double quad = K(i, i) + K(t, t) + 2.0 * yd(i) * K(i, t);
                    if (quad <= 0.0) quad = kTau;
                    const double obj = -(diff * diff) / quad;
                    if (obj <= best) { best = obj; j = t; }
                }
            }
        }
        res.max_violation = gmax + gmax2;
        if (i < 0 || j < 0 || gmax + gmax2 < tol) break;
        if (res.iterations >= max_iter) {
            std::size_t violations = 0;
            for (Eigen::Index t = 0; t < n; ++t) {
                const double v = -yd(t) * G(t);
                const bool in_up = y[static_cast<std::size_t>(t)] == 1 ? !upper(t) : !lower(t);
                const bool in_low = y[static_cast<std::size_t>(t)] == 1 ? !lower(t) : !upper(t);
                if ((in_up && v > -gmax2 + tol) || (in_low && v < gmax - tol)) ++violations;
            }
            throw ConvergenceError("qsvm: SMO did not converge within " + std::to_string(max_iter) + " iterations; " +
                                       std::to_string(violations) + " KKT violations remain",
                                   violations);
        }
        ++res.iterations;

        const double ai_old = alpha(i), aj_old = alpha(j);
        if (y[static_cast<std::size_t>(i)] != y[static_cast<std::size_t>(j)]) {
            double quad = K(i, i) + K(j, j) + 2.0 * Q(i, j);
            if (quad <= 0.0) quad = kTau;
            const double delta = (-G(i) - G(j)) / quad;
            const double diff = alpha(i) - alpha(j);
            alpha(i) += delta;
            alpha(j) += delta;
            if (diff > 0.0) {
                if (alpha(j) < 0.0) { alpha(j) = 0.0; alpha(i) = diff; }
            } else {
                if (alpha(i) < 0.0) { alpha(i) = 0.0; alpha(j) = -diff; }
            }
            if (diff > 0.0) {
                if (alpha(i) > C) { alpha(i) = C; alpha(j) = C - diff; }
            } else {
                if (alpha(j) > C) { alpha(j) = C; alpha(i) = C + diff; }
            }
        } else {
            double quad = K(i, i) + K(j, j) - 2.0 * Q(i, j);
            if (quad <= 0.0) quad = kTau;
            const double delta = (G(i) - G(j)) / quad;
            const double sum = alpha(i) + alpha(j);
            alpha(i) -= delta;
            alpha(j) += delta;
            if (sum > C) {
                if (alpha(i) > C) { alpha(i) = C; alpha(j) = sum - C; }
            } else {
                if (alpha(j) < 0.0) { alpha(j) = 0.0; alpha(i) = sum; }
            }
            if (sum > C) {
                if (alpha(j) > C) { alpha(j) = C; alpha(i) = sum - C; }
            } else {
                if (alpha(i) < 0.0) { alpha(i) = 0.0; alpha(j) = sum; }
            }
        }
        const double dai = alpha(i) - ai_old, daj = alpha(j) - aj_old;
        for (Eigen::Index t = 0; t < n; ++t) G(t) += Q(i, t) * dai + Q(j, t) * daj;
    }

    // Bias from free vectors, else the midpoint of the feasible interval.
    double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity(), sum_free = 0.0;
    std::size_t n_free = 0;
    for (Eigen::Index t = 0; t < n; ++t) {
        const double yg = yd(t) * G(t);
        if (upper(t)) {
            if (y[static_cast<std::size_t>(t)] == -1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
        } else if (lower(t)) {
            if (y[static_cast<std::size_t>(t)] == 1) ub = std::min(ub, yg); else lb = std::max(lb, yg);
        } else {
            ++n_free;
            sum_free += yg;
        }
    }
    const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : 0.5 * (ub + lb);
    res.alpha = alpha;
    res.bias = -rho;
    double quad = 0.0;
    for (Eigen::Index a = 0; a < n; ++a) {
        if (alpha(a) == 0.0) continue;
        for (Eigen::Index b = 0; b < n; ++b) quad += alpha(a) * alpha(b) * Q(a, b);
    }
    res.objective = alpha.sum() - 0.5 * quad;
    return res;
}

SvmModel fit_qsvm(const Matrix& X, const std::vector<int>& y, double C, double tol, std::size_t max_passes, double gamma) {
    check_binary(y, static_cast<std::size_t>(X.rows()), "train_qsvm");
    std::vector<int> ypm(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) ypm[i] = y[i] == 1 ? 1 : -1;
    if (!(gamma > 0.0)) gamma = 1.0 / static_cast<double>(std::max<Eigen::Index>(X.cols(), 1));
    const Matrix K = quadratic_gram(X, X, gamma);
    const SmoResult res = solve_smo(K, ypm, C, tol, max_passes * y.size());
    SvmModel m;
    m.C = C;
    m.gamma = gamma;
    m.bias = res.bias;
    std::vector<Eigen::Index> sv;
    for (Eigen::Index i = 0; i < res.alpha.size(); ++i) {
        if (res.alpha(i) > 1e-8) sv.push_back(i);
    }
    m.support.resize(static_cast<Eigen::Index>(sv.size()), X.cols());
    m.dual_coef.resize(static_cast<Eigen::Index>(sv.size()));
    for (std::size_t s = 0; s < sv.size(); ++s) {
        m.support.row(static_cast<Eigen::Index>(s)) = X.row(sv[s]);
        m.dual_coef(static_cast<Eigen::Index>(s)) = res.alpha(sv[s]) * ypm[static_cast<std::size_t>(sv[s])];
    }
    return m;
}

Vector svm_decision(const SvmModel& m, const Matrix& X) {
    if (m.support.rows() == 0) return Vector::Constant(X.rows(), m.bias);
    return (quadratic_gram(X, m.support, m.gamma) * m.dual_coef).array() + m.bias;
}

namespace {

double gini(double n0, double n1) {
    const double n = n0 + n1;
    if (n == 0.0) return 0.0;
    const double p0 = n0 / n, p1 = n1 / n;
    return 1.0 - p0 * p0 - p1 * p1;
}

int grow(TreeModel& tree, const Matrix& X, const std::vector<int>& y, std::vector<std::size_t> idx, int depth, int max_depth,
         std::size_t min_split) {
    double c0 = 0.0, c1 = 0.0;
    for (std::size_t i : idx) (y[i] ? c1 : c0) += 1.0;
    const int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes[static_cast<std::size_t>(node_id)].label = c1 > c0 ? 1 : 0;
    if (depth >= max_depth || idx.size() < min_split || c0 == 0.0 || c1 == 0.0) return node_id;

    const double parent = gini(c0, c1);
    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::pair<double, int>> vals(idx.size());
    for (Eigen::Index f = 0; f < X.cols(); ++f) {
        for (std::size_t k = 0; k < idx.size(); ++k) vals[k] = {X(static_cast<Eigen::Index>(idx[k]), f), y[idx[k]]};
        std::sort(vals.begin(), vals.end());
        double l0 = 0.0, l1 = 0.0;
        const double n = static_cast<double>(idx.size());
        for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
            (vals[k].second ? l1 : l0) += 1.0;
            if (vals[k].first == vals[k + 1].first) continue;
            const double nl = l0 + l1, nr = n - nl;
            const double impurity = (nl / n) * gini(l0, l1) + (nr / n) * gini(c0 - l0, c1 - l1);
            const double gain = parent - impurity;
            if (gain > best_gain) {
                best_gain = gain;
                best_feature = static_cast<int>(f);
                best_threshold = 0.5 * (vals[k].first + vals[k + 1].first);
            }
        }
    }
    if (best_feature < 0) return node_id;
    std::vector<std::size_t> left, right;
    for (std::size_t i : idx) (X(static_cast<Eigen::Index>(i), best_feature) <= best_threshold ? left : right).push_back(i);
    const int l = grow(tree, X, y, std::move(left), depth + 1, max_depth, min_split);
    const int r = grow(tree, X, y, std::move(right), depth + 1, max_depth, min_split);
    TreeNode& node = tree.nodes[static_cast<std::size_t>(node_id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return node_id;
}

int tree_predict(const TreeModel& t, const Eigen::Ref<const Vector>& x) {
    int node = 0;
    while (t.nodes[static_cast<std::size_t>(node)].feature >= 0) {
        const TreeNode& n = t.nodes[static_cast<std::size_t>(node)];
        node = x(n.feature) <= n.threshold ? n.left : n.right;
    }
    return t.nodes[static_cast<std::size_t>(node)].label;
}

int knn_predict(const KnnModel& m, const Eigen::Ref<const Vector>& x) {
    std::vector<std::pair<double, std::size_t>> d(static_cast<std::size_t>(m.X.rows()));
    for (Eigen::Index i = 0; i < m.X.rows(); ++i) d[static_cast<std::size_t>(i)] = {(m.X.row(i).transpose() - x).squaredNorm(), static_cast<std::size_t>(i)};
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(m.k), d.end());
    int votes[2] = {0, 0};
    for (std::size_t i = 0; i < m.k; ++i) ++votes[m.y[d[i].second]];
    if (votes[0] == votes[1]) return m.y[d[0].second];
    return votes[1] > votes[0] ? 1 : 0;
}

} // namespace

TreeModel fit_tree(const Matrix& X, const std::vector<int>& y, int max_depth, std::size_t min_split) {
    if (y.size() != static_cast<std::size_t>(X.rows())) throw Error("train tree: label count does not match rows");
    TreeModel t;
    std::vector<std::size_t> idx(y.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    grow(t, X, y, std::move(idx), 0, max_depth, min_split);
    return t;
}

KnnModel fit_knn(const Matrix& X, const std::vector<int>& y, std::size_t k) {
    if (k < 1 || k > static_cast<std::size_t>(X.rows())) {
        throw Error("train knn: k = " + std::to_string(k) + " must be in [1, " + std::to_string(X.rows()) + "]");
    }
    return {X, y, k};
}

GnbModel fit_gnb(const Matrix& X, const std::vector<int>& y, double var_floor) {
    check_binary(y, static_cast<std::size_t>(X.rows()), "train gnb");
    GnbModel m;
    m.mean = Matrix::Zero(2, X.cols());
    m.var = Matrix::Zero(2, X.cols());
    double counts[2] = {0.0, 0.0};
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        m.mean.row(y[static_cast<std::size_t>(i)]) += X.row(i);
        counts[y[static_cast<std::size_t>(i)]] += 1.0;
    }
    for (int k = 0; k < 2; ++k) m.mean.row(k) /= counts[k];
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const int k = y[static_cast<std::size_t>(i)];
        m.var.row(k).array() += (X.row(i) - m.mean.row(k)).array().square();
    }
    for (int k = 0; k < 2; ++k) m.var.row(k) = (m.var.row(k).array() / counts[k]).max(var_floor).matrix();
    m.log_prior.resize(2);
    for (int k = 0; k < 2; ++k) m.log_prior(k) = std::log(counts[k] / (counts[0] + counts[1]));
    return m;
}

std::string kind_name(Kind k) {
    switch (k) {
    case Kind::Lda: return "lda";
    case Kind::Subspace: return "subspace";
    case Kind::Qsvm: return "qsvm";
    case Kind::Tree: return "tree";
    case Kind::Knn: return "knn";
    case Kind::Gnb: return "gnb";
    }
    return "?";
}

Kind parse_kind(const std::string& name) {
    for (Kind k : {Kind::Lda, Kind::Subspace, Kind::Qsvm, Kind::Tree, Kind::Knn, Kind::Gnb}) {
        if (kind_name(k) == name) return k;
    }
    throw ConfigError("unknown classifier: " + name + " (expected qsvm, subspace, lda, tree, knn, gnb)");
}

TrainParams train_params_from_json(const json& j) {
    TrainParams p;
    try {
        p.ridge = j.value("ridge", p.ridge);
        p.n_learners = j.value("n_learners", p.n_learners);
        p.subspace_dim = j.value("subspace_dim", p.subspace_dim);
        p.seed = j.value("seed", p.seed);
        p.C = j.value("C", p.C);
        p.gamma = j.value("gamma", p.gamma);
        p.tol = j.value("tol", p.tol);
        p.max_passes = j.value("max_passes", p.max_passes);
        p.max_depth = j.value("max_depth", p.max_depth);
        p.min_split = j.value("min_split", p.min_split);
        p.k = j.value("k", p.k);
        p.var_floor = j.value("var_floor", p.var_floor);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid classifier params: ") + e.what());
    }
    return p;
}

json train_params_to_json(const TrainParams& p) {
    return {{"ridge", p.ridge}, {"n_learners", p.n_learners}, {"subspace_dim", p.subspace_dim}, {"seed", p.seed},
            {"C", p.C}, {"gamma", p.gamma}, {"tol", p.tol}, {"max_passes", p.max_passes}, {"max_depth", p.max_depth},
            {"min_split", p.min_split}, {"k", p.k}, {"var_floor", p.var_floor}};
}

TrainedModel train(Kind kind, const Dataset& data, const TrainParams& p) {
    if (data.rows() == 0) throw Error("train: empty training set");
    TrainedModel m;
    m.kind = kind;
    m.schema = data.columns;
    m.imputer = fit_imputer(data.X);
    const Matrix imputed = apply_imputer(m.imputer, data.X);
    m.standardizer = fit_standardizer(imputed);
    const Matrix Z = apply_standardizer(m.standardizer, imputed);
    switch (kind) {
    case Kind::Lda: m.params = fit_lda(Z, data.y, p.ridge); break;
    case Kind::Subspace: m.params = fit_subspace(Z, data.y, p.n_learners, p.subspace_dim, p.seed, p.ridge); break;
    case Kind::Qsvm: m.params = fit_qsvm(Z, data.y, p.C, p.tol, p.max_passes, p.gamma); break;
    case Kind::Tree: m.params = fit_tree(Z, data.y, p.max_depth, p.min_split); break;
    case Kind::Knn: m.params = fit_knn(Z, data.y, p.k); break;
    case Kind::Gnb: m.params = fit_gnb(Z, data.y, p.var_floor); break;
    }
    return m;
}

std::vector<int> predict(const TrainedModel& model, const Dataset& data) {
    std::map<std::string, Eigen::Index> have;
    for (std::size_t j = 0; j < data.columns.size(); ++j) have.emplace(data.columns[j], static_cast<Eigen::Index>(j));
    std::vector<std::string> missing, extra;
    std::set<std::string> wanted(model.schema.begin(), model.schema.end());
    for (const auto& c : model.schema) {
        if (!have.count(c)) missing.push_back(c);
    }
    for (const auto& c : data.columns) {
        if (!wanted.count(c)) extra.push_back(c);
    }
    if (!missing.empty() || !extra.empty()) {
        std::string msg = "predict: column schema mismatch";
        if (!missing.empty()) {
            msg += "; missing:";
            for (const auto& c : missing) msg += " " + c;
        }
        if (!extra.empty()) {
            msg += "; extra:";
            for (const auto& c : extra) msg += " " + c;
        }
        throw SchemaError(msg);
    }
    Matrix X(data.X.rows(), static_cast<Eigen::Index>(model.schema.size()));
    for (std::size_t j = 0; j < model.schema.size(); ++j) X.col(static_cast<Eigen::Index>(j)) = data.X.col(have.at(model.schema[j]));
    const Matrix Z = apply_standardizer(model.standardizer, apply_imputer(model.imputer, X));

    std::vector<int> out(static_cast<std::size_t>(Z.rows()));
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, LdaModel>) {
                const Matrix post = lda_posteriors(p, Z);
                for (Eigen::Index i = 0; i < Z.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax2(post(i, 0), post(i, 1));
            } else if constexpr (std::is_same_v<T, SubspaceModel>) {
                const Matrix post = subspace_posteriors(p, Z);
                for (Eigen::Index i = 0; i < Z.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax2(post(i, 0), post(i, 1));
            } else if constexpr (std::is_same_v<T, SvmModel>) {
                const Vector f = svm_decision(p, Z);
                for (Eigen::Index i = 0; i < Z.rows(); ++i) out[static_cast<std::size_t>(i)] = f(i) > 0.0 ? 1 : 0;
            } else if constexpr (std::is_same_v<T, TreeModel>) {
                for (Eigen::Index i = 0; i < Z.rows(); ++i) out[static_cast<std::size_t>(i)] = tree_predict(p, Z.row(i).transpose());
            } else if constexpr (std::is_same_v<T, KnnModel>) {
                for (Eigen::Index i = 0; i < Z.rows(); ++i) out[static_cast<std::size_t>(i)] = knn_predict(p, Z.row(i).transpose());
            } else {
                for (Eigen::Index i = 0; i < Z.rows(); ++i) {
                    double ll[2];
                    for (int k = 0; k < 2; ++k) {
                        const auto diff = (Z.row(i) - p.mean.row(k)).array();
                        ll[k] = p.log_prior(k) - 0.5 * (diff.square() / p.var.row(k).array() +
                                                        (2.0 * 3.14159265358979323846 * p.var.row(k).array()).log()).sum();
                    }
                    out[static_cast<std::size_t>(i)] = argmax2(ll[0], ll[1]);
                }
            }
        },
        model.params);
    return out;
}

json model_to_json(const TrainedModel& m) {
    json j;
    j["kind"] = kind_name(m.kind);
    j["schema"] = m.schema;
    j["imputer_median"] = vector_to_json(m.imputer.median);
    std::vector<bool> constant = m.standardizer.constant;
    j["standardizer"] = {{"mean", vector_to_json(m.standardizer.mean)}, {"std", vector_to_json(m.standardizer.std)},
                         {"constant", constant}};
    json params;
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, LdaModel>) {
                params = lda_to_json(p);
            } else if constexpr (std::is_same_v<T, SubspaceModel>) {
                json learners = json::array();
                for (std::size_t l = 0; l < p.learners.size(); ++l) {
                    learners.push_back({{"columns", p.subsets[l]}, {"lda", lda_to_json(p.learners[l])}});
                }
                params = {{"learners", learners}};
            } else if constexpr (std::is_same_v<T, SvmModel>) {
                params = {{"support", matrix_to_json(p.support)}, {"dual_coef", vector_to_json(p.dual_coef)},
                          {"bias", p.bias}, {"C", p.C}, {"gamma", p.gamma}};
            } else if constexpr (std::is_same_v<T, TreeModel>) {
                json nodes = json::array();
                for (const auto& n : p.nodes) {
                    nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left},
                                     {"right", n.right}, {"label", n.label}});
                }
                params = {{"nodes", nodes}};
            } else if constexpr (std::is_same_v<T, KnnModel>) {
                params = {{"X", matrix_to_json(p.X)}, {"y", p.y}, {"k", p.k}};
            } else {
                params = {{"mean", matrix_to_json(p.mean)}, {"var", matrix_to_json(p.var)},
                          {"log_prior", vector_to_json(p.log_prior)}};
            }
        },
        m.params);
    j["params"] = params;
    return j;
}

TrainedModel model_from_json(const json& j) {
    TrainedModel m;
    try {
        m.kind = parse_kind(j.at("kind").get<std::string>());
        m.schema = j.at("schema").get<std::vector<std::string>>();
        m.imputer.median = vector_from_json(j.at("imputer_median"));
        m.standardizer.mean = vector_from_json(j.at("standardizer").at("mean"));
        m.standardizer.std = vector_from_json(j.at("standardizer").at("std"));
        m.standardizer.constant = j.at("standardizer").at("constant").get<std::vector<bool>>();
        const json& p = j.at("params");
        switch (m.kind) {
        case Kind::Lda: m.params = lda_from_json(p); break;
        case Kind::Subspace: {
            SubspaceModel s;
            for (const auto& l : p.at("learners")) {
                s.subsets.push_back(l.at("columns").get<std::vector<std::size_t>>());
                s.learners.push_back(lda_from_json(l.at("lda")));
            }
            m.params = std::move(s);
            break;
        }
        case Kind::Qsvm:
            m.params = SvmModel{matrix_from_json(p.at("support")), vector_from_json(p.at("dual_coef")),
                                p.at("bias").get<double>(), p.at("C").get<double>(), p.at("gamma").get<double>()};
            break;
        case Kind::Tree: {
            TreeModel t;
            for (const auto& n : p.at("nodes")) {
                t.nodes.push_back({n.at("feature").get<int>(), n.at("threshold").get<double>(), n.at("left").get<int>(),
                                   n.at("right").get<int>(), n.at("label").get<int>()});
            }
            m.params = std::move(t);
            break;
        }
        case Kind::Knn:
            m.params = KnnModel{matrix_from_json(p.at("X")), p.at("y").get<std::vector<int>>(), p.at("k").get<std::size_t>()};
            break;
        case Kind::Gnb:
            m.params = GnbModel{matrix_from_json(p.at("mean")), matrix_from_json(p.at("var")), vector_from_json(p.at("log_prior"))};
            break;
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("invalid model file: ") + e.what());
    }
    return m;
}

std::vector<int> kfold_split(const std::vector<int>& labels, const std::vector<std::string>& groups, const FoldParams& p) {
    if (p.k < 2) throw ConfigError("kfold_split: k must be >= 2");
    const std::size_t n = labels.size();
    if (p.group_by_pile && groups.size() != n) throw ConfigError("kfold_split: one group id per row is required");

    // Group keys in sorted order; ungrouped rows are singleton groups.
    std::map<std::string, std::vector<std::size_t>> members;
    std::vector<std::string> key_of(n);
    for (std::size_t i = 0; i < n; ++i) {
        char buf[24];
        std::snprintf(buf, sizeof(buf), "#%012zu", i);
        key_of[i] = p.group_by_pile ? groups[i] : std::string(buf);
        members[key_of[i]].push_back(i);
    }
    std::vector<std::vector<std::string>> by_class(p.stratify ? 2 : 1);
    for (const auto& [key, rows] : members) {
        const int label = labels[rows.front()];
        for (std::size_t r : rows) {
            if (labels[r] != label && p.stratify) throw ConfigError("kfold_split: group " + key + " mixes labels");
        }
        by_class[p.stratify ? static_cast<std::size_t>(label) : 0].push_back(key);
    }
    std::map<std::string, int> fold_of;
    std::size_t offset = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& keys = by_class[c];
        if (keys.size() < p.k) {
            throw ConfigError("kfold_split: " + std::string(p.stratify ? "class " + std::to_string(c) + " has " : "only ") +
                              std::to_string(keys.size()) + " groups, fewer than k = " + std::to_string(p.k));
        }
        Rng rng = Rng::stream(p.seed, {0x464F4C44, c});
        for (std::size_t i = keys.size(); i > 1; --i) std::swap(keys[i - 1], keys[rng.below(i)]);
        for (std::size_t i = 0; i < keys.size(); ++i) fold_of[keys[i]] = static_cast<int>((offset + i) % p.k);
        offset += keys.size();
    }
    std::vector<int> folds(n);
    for (std::size_t i = 0; i < n; ++i) folds[i] = fold_of.at(key_of[i]);
    return folds;
}

CVReport cross_validate(const Trainer& trainer, const Dataset& data, const FoldParams& p, int jobs, bool keep_models,
                        const std::string& model_name) {
    CVReport rep;
    rep.model = model_name;
    rep.seed = p.seed;
    rep.folds = kfold_split(data.y, data.groups, p);
    rep.fold_matrices.assign(p.k, {});
    std::vector<std::optional<TrainedModel>> models(p.k);
    parallel_for(p.k, jobs, [&](std::size_t f) {
        std::vector<std::size_t> train_idx, test_idx;
        for (std::size_t i = 0; i < data.rows(); ++i) (rep.folds[i] == static_cast<int>(f) ? test_idx : train_idx).push_back(i);
        const Dataset test = data.subset(test_idx);
        try {
            TrainedModel m = trainer(data.subset(train_idx));
            const std::vector<int> pred = predict(m, test);
            for (std::size_t i = 0; i < pred.size(); ++i) rep.fold_matrices[f].add(test.y[i], pred[i]);
            if (keep_models) models[f] = std::move(m);
        } catch (const Error& e) {
            throw Error("fold " + std::to_string(f) + ": " + e.what());
        }
    });
    for (const auto& cm : rep.fold_matrices) rep.pooled += cm;
    rep.metrics = evalmap::metrics(rep.pooled);
    if (keep_models) {
        for (auto& m : models) rep.fold_models.push_back(std::move(*m));
    }
    return rep;
}

namespace {

json cm_to_json(const evalmap::ConfusionMatrix& cm) {
    return json::array({json::array({cm.counts[0][0], cm.counts[0][1]}), json::array({cm.counts[1][0], cm.counts[1][1]})});
}

evalmap::ConfusionMatrix cm_from_json(const json& j) {
    evalmap::ConfusionMatrix cm;
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) cm.counts[a][b] = j.at(a).at(b).get<std::size_t>();
    return cm;
}

} // namespace

json cv_report_to_json(const CVReport& r) {
    json folds = json::array();
    for (const auto& cm : r.fold_matrices) folds.push_back(cm_to_json(cm));
    json per_class = json::object();
    const char* names[2] = {"Cat1", "Cat2"};
    for (std::size_t c = 0; c < 2; ++c) {
        const auto& m = r.metrics.per_class[c];
        per_class[names[c]] = {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"undefined", m.undefined}};
    }
    return {{"model", r.model},
            {"seed", r.seed},
            {"fold_assignment", r.folds},
            {"fold_confusion", folds},
            {"pooled_confusion", cm_to_json(r.pooled)},
            {"overall_accuracy", r.metrics.overall_accuracy},
            {"per_class", per_class}};
}

CVReport cv_report_from_json(const json& j) {
    CVReport r;
    try {
        r.model = j.at("model").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.folds = j.at("fold_assignment").get<std::vector<int>>();
        for (const auto& f : j.at("fold_confusion")) r.fold_matrices.push_back(cm_from_json(f));
        r.pooled = cm_from_json(j.at("pooled_confusion"));
        r.metrics = evalmap::metrics(r.pooled);
    } catch (const json::exception& e) {
        throw FormatError(std::string("invalid CV report: ") + e.what());
    }
    return r;
}

} // namespace spoilcal::ml
