#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "qfed/io.hpp"
#include "qfed/synth.hpp"

using namespace qfed;

namespace {

SynthConfig small_config(std::size_t per_grade, std::uint64_t seed) {
    SynthConfig c;
    c.per_grade = per_grade;
    c.seed = seed;
    return c;
}

std::filesystem::path scratch_dir(const std::string &name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("grade thresholds") {
    CHECK(grade_of_fraction(0.02) == 0);
    CHECK(grade_of_fraction(0.50) == 2);
    CHECK(grade_of_fraction(0.70) == 3);
    CHECK(grade_of_fraction(0.0) == 0);
    CHECK(grade_of_fraction(0.0499) == 0);
    CHECK(grade_of_fraction(0.05) == 1);
    CHECK(grade_of_fraction(0.3299) == 1);
    CHECK(grade_of_fraction(0.33) == 2);
    CHECK(grade_of_fraction(0.66) == 2);
    CHECK(grade_of_fraction(0.6601) == 3);
    CHECK(grade_of_fraction(1.0) == 3);
    CHECK_THROWS_AS(grade_of_fraction(-0.01), std::out_of_range);
    CHECK_THROWS_AS(grade_of_fraction(1.01), std::out_of_range);
    CHECK(binary_label_of_grade(0) == transplantable);
    CHECK(binary_label_of_grade(1) == transplantable);
    CHECK(binary_label_of_grade(2) == non_transplantable);
    CHECK(binary_label_of_grade(3) == non_transplantable);
}

TEST_CASE("one sample per grade") {
    const auto s = gen_dataset(small_config(1, 3));
    REQUIRE(s.size() == 4);
    for (int g = 0; g < 4; ++g) {
        CHECK(s[static_cast<std::size_t>(g)].grade == g);
    }
}

TEST_CASE("property: labels are sound and counts balanced") {
    const auto samples = gen_dataset(small_config(40, 11), 2);
    REQUIRE(samples.size() == 160);
    std::array<std::size_t, 4> per_grade{};
    std::array<std::size_t, 2> per_label{};
    for (const auto &s : samples) {
        const double f = measure_droplet_fraction(s.image);
        CHECK(f == s.droplet_fraction);
        CHECK(grade_of_fraction(f) == s.grade);
        CHECK(binary_label_of_grade(s.grade) == s.binary_label);
        ++per_grade.at(static_cast<std::size_t>(s.grade));
        ++per_label.at(static_cast<std::size_t>(s.binary_label));
        CHECK(s.image.shape() == Shape{1, 64, 64});
        for (double v : s.image.data()) {
            CHECK((v == 1.0 || (v >= 0.0 && v <= 0.9)));
        }
    }
    CHECK(per_grade == std::array<std::size_t, 4>{40, 40, 40, 40});
    CHECK(per_label[0] == per_label[1]);
}

TEST_CASE("property: generation is deterministic and independent of workers") {
    const auto a = gen_dataset(small_config(6, 21), 1);
    const auto b = gen_dataset(small_config(6, 21), 3);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].image == b[i].image);
        CHECK(a[i].seed == b[i].seed);
    }
    const auto c = gen_dataset(small_config(6, 22), 1);
    CHECK_FALSE(a[0].image == c[0].image);
}

TEST_CASE("other image sizes") {
    SynthConfig c = small_config(2, 5);
    c.height = 32;
    c.width = 48;
    for (const auto &s : gen_dataset(c)) {
        CHECK(s.image.shape() == Shape{1, 32, 48});
        CHECK(grade_of_fraction(measure_droplet_fraction(s.image)) == s.grade);
    }
}

TEST_CASE("impossible placement reports diagnostics") {
    SynthConfig c = small_config(1, 1);
    c.height = 8;
    c.width = 8;
    c.min_radius = 6;
    c.max_radius = 7;
    c.max_attempts = 50;
    try {
        (void)gen_sample(c, 3, 1);
        FAIL("expected placement failure");
    } catch (const std::runtime_error &e) {
        CHECK(std::string(e.what()).find("grade 3") != std::string::npos);
    }
    SynthConfig bad = small_config(0, 1);
    CHECK_THROWS(bad.validate());
}

TEST_CASE("dataset directory round-trip") {
    const auto dir = scratch_dir("qfed_test_synth");
    const auto cfg = small_config(3, 8);
    const auto samples = gen_dataset(cfg);
    save_dataset(dir, samples, cfg);
    CHECK(std::filesystem::exists(dir / "index.json"));
    std::size_t raw = 0;
    for (const auto &e : std::filesystem::directory_iterator(dir)) {
        raw += e.path().extension() == ".raw";
    }
    CHECK(raw == 12);
    const auto back = load_dataset(dir);
    REQUIRE(back.size() == samples.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].image == samples[i].image);
        CHECK(back[i].grade == samples[i].grade);
        CHECK(back[i].binary_label == samples[i].binary_label);
        CHECK(back[i].droplet_fraction == samples[i].droplet_fraction);
        CHECK(back[i].seed == samples[i].seed);
    }
    const auto bytes = read_file(dir / "sample_00000.raw");
    CHECK(bytes.size() == 8 + 64 * 64 * 4);
    CHECK(get_u32(bytes.data()) == 64);
    std::filesystem::remove_all(dir);
}

TEST_CASE("k-fold laws on the default dataset size") {
    std::vector<int> labels(4400);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        labels[i] = i < 2200 ? 0 : 1;
    }
    const auto folds = kfold_splits(labels, 5, 3);
    REQUIRE(folds.size() == 5);
    std::vector<int> seen(labels.size(), 0);
    for (const auto &f : folds) {
        CHECK(f.test.size() == 880);
        CHECK(f.train.size() == 3520);
        std::size_t ones = 0;
        for (auto i : f.test) {
            ++seen[i];
            ones += labels[i] == 1;
        }
        CHECK(ones == 440);
        std::vector<std::size_t> all = f.train;
        all.insert(all.end(), f.test.begin(), f.test.end());
        std::sort(all.begin(), all.end());
        CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
        CHECK(all.size() == labels.size());
        CHECK(std::is_sorted(f.test.begin(), f.test.end()));
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
    CHECK_THROWS(kfold_splits(std::vector<int>(7, 0), 5, 1));
    CHECK_THROWS(kfold_splits(labels, 1, 1));
}

TEST_CASE("hold-out split and balanced subsets") {
    std::vector<int> labels(1000);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        labels[i] = static_cast<int>(i % 2);
    }
    const auto s = holdout_split(labels, 400, 1);
    CHECK(s.test.size() == 400);
    CHECK(s.train.size() == 600);
    std::set<std::size_t> test(s.test.begin(), s.test.end());
    for (auto i : s.train) {
        CHECK(test.count(i) == 0);
    }
    const auto sub = balanced_subset(labels, 150, 2);
    CHECK(sub.size() == 150);
    std::size_t ones = 0;
    for (auto i : sub) {
        ones += labels[i];
    }
    CHECK((ones == 75));
    CHECK_THROWS(balanced_subset(labels, 1001, 2));
}

TEST_CASE("feature CSV loading") {
    const auto dir = scratch_dir("qfed_test_csv");
    write_file_atomic(dir / "f.csv", std::string_view("a,b,c,label\n0.5,1,2,0\n-1,2.5,3,1\n\n"));
    const Dataset d = load_feature_csv(dir / "f.csv");
    REQUIRE(d.size() == 2);
    CHECK(d.inputs[1] == Tensor::vector({-1, 2.5, 3}));
    CHECK(d.labels == std::vector<int>{0, 1});
    write_file_atomic(dir / "bad.csv", std::string_view("1,2,0\n1,x,1\n"));
    CHECK_THROWS(load_feature_csv(dir / "bad.csv"));
    write_file_atomic(dir / "label.csv", std::string_view("1,2,3\n"));
    CHECK_THROWS(load_feature_csv(dir / "label.csv"));
    write_file_atomic(dir / "ragged.csv", std::string_view("1,2,0\n1,0\n"));
    CHECK_THROWS(load_feature_csv(dir / "ragged.csv"));
    std::filesystem::remove_all(dir);
}
