#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace kpriors {

/// A batch of raw inputs with scalar labels. Bernoulli labels are 0/1,
/// Poisson labels nonnegative integers, softmax labels class indices.
struct LabeledData {
    Eigen::MatrixXd inputs;  ///< N x D
    Eigen::VectorXd labels;  ///< length N

    Eigen::Index size() const { return inputs.rows(); }
    Eigen::Index dim() const { return inputs.cols(); }
};

LabeledData concat(const LabeledData& a, const LabeledData& b);
LabeledData take_rows(const LabeledData& data, const std::vector<Eigen::Index>& rows);
/// Complement of `rows`; throws on out-of-range or duplicate indices.
LabeledData drop_rows(const LabeledData& data, const std::vector<Eigen::Index>& rows);

/// Parse "label idx:val idx:val ..." lines with 1-based strictly ascending
/// indices. Width is the largest index seen; missing entries are zero.
/// Malformed content raises std::runtime_error naming the line.
LabeledData load_sparse(const std::string& path);

/// Companion writer; emits every entry (zeros included) at full precision
/// so load_sparse(save_sparse(d)) reproduces d exactly.
void save_sparse(const LabeledData& data, const std::string& path);

/// Numeric CSV with a header row; the named column becomes the label and
/// the remaining columns, in header order, become features.
LabeledData load_dense_csv(const std::string& path, const std::string& label_column);

/// Two interleaved half-circle arcs of radius 1, n/2 points per class,
/// plus isotropic Gaussian noise. Class 0 lies on the circle centered at
/// the origin (upper arc), class 1 on the circle centered at (1, 0.5)
/// (lower arc), i.e. the first arc mirrored and shifted. Deterministic in
/// `seed`; throws std::invalid_argument for odd n.
LabeledData make_moons(int n, double noise, std::uint64_t seed);

/// Split into k equal chunks after sorting by the first input coordinate
/// (ties by row index): chunk 0 holds the left-most points. Requires
/// k | n.
std::vector<LabeledData> ordered_splits(const LabeledData& data, int k);

struct Standardization {
    Eigen::VectorXd mean;
    Eigen::VectorXd std;  ///< population std; zero-variance columns keep 1
};

/// Column-wise (x - mean)/std computed from `train` only and applied to
/// train plus every set in `others` in place. Constant columns pass
/// through unscaled.
Standardization standardize(LabeledData& train, std::vector<LabeledData*> others = {});

struct SplitSpec {
    double fraction = 0.2;  ///< held-out fraction, in (0, 1]
    std::uint64_t seed = 0;
    bool stratify = false;  ///< preserve label proportions (binary labels)
};

/// Random (train, held-out) split; stratified splits round the held-out
/// count per label value.
std::pair<LabeledData, LabeledData> split_holdout(const LabeledData& data, const SplitSpec& spec);

}  // namespace kpriors
