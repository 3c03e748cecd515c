#pragma once

#include "spoilcal/features.hpp"
#include "spoilcal/metrics.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace spoilcal::ml {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Rows are samples. y holds 0 (Cat1) or 1 (Cat2); groups are pile ids.
struct Dataset {
    std::vector<std::string> columns;
    Matrix X;
    std::vector<int> y;
    std::vector<std::string> groups;

    std::size_t rows() const { return static_cast<std::size_t>(X.rows()); }
    Dataset subset(const std::vector<std::size_t>& idx) const;
};

Dataset from_labeled(const features::LabeledTable& table);
// Unlabeled rows (y filled with 0) for prediction.
Dataset from_table(const features::FeatureTable& table);

// Column medians of the valid entries; all-NaN columns impute 0.
struct Imputer {
    Vector median;
};
Imputer fit_imputer(const Matrix& X);
Matrix apply_imputer(const Imputer& imp, const Matrix& X);

struct Standardizer {
    Vector mean;
    Vector std; // population
    std::vector<bool> constant;
};
Standardizer fit_standardizer(const Matrix& X);
Matrix apply_standardizer(const Standardizer& s, const Matrix& X);

// Linear discriminant with pooled (maximum-likelihood) within-class covariance
// plus ridge * I and frequency priors. Score_k(x) = x.coef_k + intercept_k.
struct LdaModel {
    Matrix coef;      // d x 2
    Vector intercept; // 2
    Matrix means;     // 2 x d
};
LdaModel fit_lda(const Matrix& X, const std::vector<int>& y, double ridge = 1e-6);
Matrix lda_posteriors(const LdaModel& m, const Matrix& X); // n x 2

struct SubspaceModel {
    std::vector<std::vector<std::size_t>> subsets; // sorted column indices per learner
    std::vector<LdaModel> learners;
};
SubspaceModel fit_subspace(const Matrix& X, const std::vector<int>& y, std::size_t n_learners, std::size_t subspace_dim,
                           std::uint64_t seed, double ridge = 1e-6);
Matrix subspace_posteriors(const SubspaceModel& m, const Matrix& X);

// Dual soft-margin SVM with K(u,v) = (1 + gamma u.v)^2, solved by SMO with
// second-order working-set selection. Labels map 0 -> -1, 1 -> +1.
struct SvmModel {
    Matrix support;    // m x d
    Vector dual_coef;  // alpha_i * y_i of the support vectors
    double bias = 0.0; // f(x) = sum dual_coef_i K(s_i, x) + bias
    double C = 1.0;
    double gamma = 1.0;
};

struct SmoResult {
    Vector alpha;       // all training duals
    double bias = 0.0;
    double objective = 0.0; // sum alpha - 1/2 alpha' Q alpha (maximized)
    std::size_t iterations = 0;
    double max_violation = 0.0; // m(alpha) - M(alpha) at exit
};

double quadratic_kernel(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v, double gamma = 1.0);
Matrix quadratic_gram(const Matrix& A, const Matrix& B, double gamma = 1.0);
SmoResult solve_smo(const Matrix& gram, const std::vector<int>& y_pm, double C, double tol, std::size_t max_iter);
// gamma <= 0 selects 1 / d.
SvmModel fit_qsvm(const Matrix& X, const std::vector<int>& y, double C = 1.0, double tol = 1e-3, std::size_t max_passes = 10000,
                  double gamma = 1.0);
Vector svm_decision(const SvmModel& m, const Matrix& X);

struct TreeNode {
    int feature = -1; // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;    // x[feature] <= threshold
    int right = -1;
    int label = 0;
};
struct TreeModel {
    std::vector<TreeNode> nodes; // nodes[0] is the root
};
TreeModel fit_tree(const Matrix& X, const std::vector<int>& y, int max_depth = 10, std::size_t min_split = 2);

struct KnnModel {
    Matrix X;
    std::vector<int> y;
    std::size_t k = 5;
};
KnnModel fit_knn(const Matrix& X, const std::vector<int>& y, std::size_t k = 5);

struct GnbModel {
    Matrix mean; // 2 x d
    Matrix var;  // 2 x d
    Vector log_prior;
};
GnbModel fit_gnb(const Matrix& X, const std::vector<int>& y, double var_floor = 1e-9);

enum class Kind { Lda, Subspace, Qsvm, Tree, Knn, Gnb };

std::string kind_name(Kind k);
Kind parse_kind(const std::string& name);

struct TrainParams {
    double ridge = 1e-6;
    std::size_t n_learners = 30;
    std::size_t subspace_dim = 0; // 0 -> ceil(d / 2)
    std::uint64_t seed = 1;
    double C = 1.0;
    double gamma = 0.0; // 0 -> 1 / d
    double tol = 1e-3;
    std::size_t max_passes = 10000;
    int max_depth = 10;
    std::size_t min_split = 2;
    std::size_t k = 5;
    double var_floor = 1e-9;
};

TrainParams train_params_from_json(const nlohmann::json& j);
nlohmann::json train_params_to_json(const TrainParams& p);

struct TrainedModel {
    Kind kind = Kind::Lda;
    std::vector<std::string> schema;
    Imputer imputer;
    Standardizer standardizer;
    std::variant<LdaModel, SubspaceModel, SvmModel, TreeModel, KnnModel, GnbModel> params;
};

// Imputes and standardizes with training statistics, then fits `kind`.
TrainedModel train(Kind kind, const Dataset& data, const TrainParams& params = {});

// Columns are matched by name; missing or extra columns raise SchemaError.
std::vector<int> predict(const TrainedModel& model, const Dataset& data);

nlohmann::json model_to_json(const TrainedModel& m);
TrainedModel model_from_json(const nlohmann::json& j);

struct FoldParams {
    std::size_t k = 5;
    bool stratify = true;
    bool group_by_pile = true;
    std::uint64_t seed = 1;
};

// Fold index per row.
std::vector<int> kfold_split(const std::vector<int>& labels, const std::vector<std::string>& groups, const FoldParams& p);

using Trainer = std::function<TrainedModel(const Dataset&)>;

struct CVReport {
    std::string model;
    std::uint64_t seed = 0;
    std::vector<int> folds;
    std::vector<evalmap::ConfusionMatrix> fold_matrices;
    evalmap::ConfusionMatrix pooled;
    evalmap::Metrics metrics;
    std::vector<TrainedModel> fold_models; // kept when requested
};

CVReport cross_validate(const Trainer& trainer, const Dataset& data, const FoldParams& p, int jobs = 1,
                        bool keep_models = false, const std::string& model_name = "");

nlohmann::json cv_report_to_json(const CVReport& r);
CVReport cv_report_from_json(const nlohmann::json& j);

} // namespace spoilcal::ml
