#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "qfed/dataset.hpp"
#include "qfed/tensor.hpp"

namespace qfed {

/// Steatosis grade from a fat-area fraction: <0.05 -> 0, [0.05, 0.33) -> 1,
/// [0.33, 0.66] -> 2, >0.66 -> 3.
int grade_of_fraction(double fraction);

/// Grades 0 and 1 are transplantable.
int binary_label_of_grade(int grade);
std::string label_name(int binary_label);

struct SynthConfig {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t per_grade = 1100;
    /// Droplet semi-axis range in pixels.
    double min_radius = 2.0;
    double max_radius = 7.0;
    /// Mid-gray background level and the standard deviation of its speckle.
    double background = 0.5;
    double noise_scale = 0.08;
    /// Upper bound of the grade-3 fraction band.
    double max_fraction = 0.8;
    std::uint64_t seed = 0;
    /// Droplet placement attempts per image before giving up.
    std::size_t max_attempts = 200000;

    void validate() const;
};

void to_json(nlohmann::json &j, const SynthConfig &c);
void from_json(const nlohmann::json &j, SynthConfig &c);

struct SynthSample {
    /// [1, H, W]; droplet pixels are exactly 1, background pixels are <= 0.9.
    Tensor image;
    double droplet_fraction = 0.0;
    int grade = 0;
    int binary_label = transplantable;
    std::uint64_t seed = 0;
};

/// Fraction of pixels equal to 1.
double measure_droplet_fraction(const Tensor &image);

/// One image of the given grade; the fraction target is drawn from the grade's band.
SynthSample gen_sample(const SynthConfig &config, int grade, std::uint64_t sample_seed);

/// per_grade samples of each grade, grade-major. Sample i uses seed
/// derive_seed(config.seed, i), so `workers` never changes the output.
std::vector<SynthSample> gen_dataset(const SynthConfig &config, std::size_t workers = 1);

/// Images and binary labels.
Dataset to_dataset(const std::vector<SynthSample> &samples);

/**
 * Directory layout: index.json plus sample_<i>.raw per image, where each raw
 * file is u32 LE height, u32 LE width, then height*width f32 LE pixels.
 */
void save_dataset(const std::filesystem::path &dir, const std::vector<SynthSample> &samples,
                  const SynthConfig &config);
std::vector<SynthSample> load_dataset(const std::filesystem::path &dir);

/// Rows of comma-separated feature values followed by a 0/1 label.
Dataset load_feature_csv(const std::filesystem::path &path);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Stratified k-fold: every class count must be divisible by k. Indices are
/// positions in `labels`; both lists are sorted.
std::vector<Split> kfold_splits(const std::vector<int> &labels, std::size_t k,
                                std::uint64_t seed);

/// Stratified hold-out with test_count / 2 samples of each class in the test set.
Split holdout_split(const std::vector<int> &labels, std::size_t test_count, std::uint64_t seed);

/// Class-balanced subset of `count` positions (sorted).
std::vector<std::size_t> balanced_subset(const std::vector<int> &labels, std::size_t count,
                                         std::uint64_t seed);

} // namespace qfed
