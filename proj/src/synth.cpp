#include "qfed/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "qfed/io.hpp"
#include "qfed/rng.hpp"

namespace qfed {

int grade_of_fraction(double fraction) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw std::out_of_range("grade_of_fraction: fraction must be in [0, 1], got " +
                                std::to_string(fraction));
    }
    if (fraction < 0.05) {
        return 0;
    }
    if (fraction < 0.33) {
        return 1;
    }
    if (fraction <= 0.66) {
        return 2;
    }
    return 3;
}

int binary_label_of_grade(int grade) {
    if (grade < 0 || grade > 3) {
        throw std::out_of_range("steatosis grade must be in [0, 3], got " +
                                std::to_string(grade));
    }
    return grade <= 1 ? transplantable : non_transplantable;
}

std::string label_name(int binary_label) {
    return binary_label == transplantable ? "transplantable" : "non-transplantable";
}

void SynthConfig::validate() const {
    if (height < 8 || width < 8) {
        throw std::invalid_argument("synth: image must be at least 8x8");
    }
    if (per_grade < 1) {
        throw std::invalid_argument("synth: samples per grade must be >= 1");
    }
    if (!(min_radius > 0.0) || !(max_radius >= min_radius)) {
        throw std::invalid_argument("synth: need 0 < min_radius <= max_radius");
    }
    if (!(background > 0.0 && background < 0.9) || !(noise_scale >= 0.0)) {
        throw std::invalid_argument("synth: background must be in (0, 0.9), noise >= 0");
    }
    if (!(max_fraction > 0.66 && max_fraction < 1.0)) {
        throw std::invalid_argument("synth: max_fraction must be in (0.66, 1)");
    }
}

void to_json(nlohmann::json &j, const SynthConfig &c) {
    j = nlohmann::json{{"height", c.height},           {"width", c.width},
                       {"per_grade", c.per_grade},     {"min_radius", c.min_radius},
                       {"max_radius", c.max_radius},   {"background", c.background},
                       {"noise_scale", c.noise_scale}, {"max_fraction", c.max_fraction},
                       {"seed", c.seed},               {"max_attempts", c.max_attempts}};
}

void from_json(const nlohmann::json &j, SynthConfig &c) {
    SynthConfig d;
    c.height = j.value("height", d.height);
    c.width = j.value("width", d.width);
    c.per_grade = j.value("per_grade", d.per_grade);
    c.min_radius = j.value("min_radius", d.min_radius);
    c.max_radius = j.value("max_radius", d.max_radius);
    c.background = j.value("background", d.background);
    c.noise_scale = j.value("noise_scale", d.noise_scale);
    c.max_fraction = j.value("max_fraction", d.max_fraction);
    c.seed = j.value("seed", d.seed);
    c.max_attempts = j.value("max_attempts", d.max_attempts);
}

double measure_droplet_fraction(const Tensor &image) {
    std::size_t n = 0;
    for (double v : image.data()) {
        n += v == 1.0 ? 1 : 0;
    }
    return static_cast<double>(n) / static_cast<double>(image.size());
}

namespace {

constexpr double background_ceiling = 0.9;

// Inclusive pixel-count range whose fraction maps to `grade`.
std::pair<std::size_t, std::size_t> count_band(int grade, std::size_t n_pixels,
                                               double max_fraction) {
    std::size_t lo = n_pixels + 1, hi = 0;
    const auto cap = static_cast<std::size_t>(std::floor(max_fraction * double(n_pixels)));
    for (std::size_t c = 0; c <= n_pixels; ++c) {
        if (grade == 3 && c > cap) {
            break;
        }
        if (grade_of_fraction(double(c) / double(n_pixels)) == grade) {
            lo = std::min(lo, c);
            hi = std::max(hi, c);
        }
    }
    return {lo, hi};
}

void paint_background(Tensor &image, const SynthConfig &config, Rng &rng) {
    const std::size_t H = config.height, W = config.width;
    std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
    std::uniform_real_distribution<double> freq(0.5, 2.0);
    std::normal_distribution<double> speckle(0.0, config.noise_scale);
    const double fx = freq(rng), fy = freq(rng), px = phase(rng), py = phase(rng);
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const double shade = 0.04 * std::sin(2 * std::numbers::pi * fx * double(x) / double(W) + px) +
                                 0.04 * std::sin(2 * std::numbers::pi * fy * double(y) / double(H) + py);
            const double v = config.background + shade + speckle(rng);
            image[y * W + x] = std::clamp(v, 0.0, background_ceiling);
        }
    }
}

} // namespace

SynthSample gen_sample(const SynthConfig &config, int grade, std::uint64_t sample_seed) {
    config.validate();
    const std::size_t H = config.height, W = config.width, N = H * W;
    const auto [lo, hi] = count_band(grade, N, config.max_fraction);
    if (lo > hi) {
        throw std::invalid_argument("synth: grade " + std::to_string(grade) +
                                    " has no reachable pixel count");
    }
    Rng rng(sample_seed);
    const std::size_t target = std::uniform_int_distribution<std::size_t>(lo, hi)(rng);

    std::vector<std::uint8_t> mask(N, 0);
    std::size_t filled = 0;
    std::uniform_int_distribution<std::size_t> pick(0, N - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double r_hi = config.max_radius;
    std::size_t misses = 0;
    std::size_t attempts = 0;
    std::vector<std::size_t> cells;
    while (filled < target) {
        if (++attempts > config.max_attempts) {
            throw std::runtime_error(
                "synth: droplet placement stalled for grade " + std::to_string(grade) +
                " (target " + std::to_string(target) + " px, reached " +
                std::to_string(filled) + " of " + std::to_string(N) + ", radius " +
                std::to_string(r_hi) + ") after " + std::to_string(config.max_attempts) +
                " attempts");
        }
        if (misses > 40) {
            r_hi = std::max(0.5, r_hi * 0.85);
            misses = 0;
        }
        const std::size_t centre = pick(rng);
        if (mask[centre] != 0) {
            ++misses;
            continue;
        }
        const double r_lo = std::min(config.min_radius, r_hi);
        const double a = r_lo + (r_hi - r_lo) * unit(rng);
        const double b = a * (0.6 + 0.4 * unit(rng));
        const double phi = std::numbers::pi * unit(rng);
        const double cx = double(centre % W) + unit(rng);
        const double cy = double(centre / W) + unit(rng);
        const double c = std::cos(phi), s = std::sin(phi);
        const double reach = std::max(a, b) + 1.0;
        const auto x0 = static_cast<std::ptrdiff_t>(std::max(0.0, std::floor(cx - reach)));
        const auto x1 = static_cast<std::ptrdiff_t>(std::min(double(W - 1), std::ceil(cx + reach)));
        const auto y0 = static_cast<std::ptrdiff_t>(std::max(0.0, std::floor(cy - reach)));
        const auto y1 = static_cast<std::ptrdiff_t>(std::min(double(H - 1), std::ceil(cy + reach)));
        cells.clear();
        bool overlaps = false;
        for (auto y = y0; y <= y1 && !overlaps; ++y) {
            for (auto x = x0; x <= x1; ++x) {
                const double dx = double(x) + 0.5 - cx, dy = double(y) + 0.5 - cy;
                const double u = (dx * c + dy * s) / a, v = (-dx * s + dy * c) / b;
                if (u * u + v * v <= 1.0) {
                    const std::size_t idx = std::size_t(y) * W + std::size_t(x);
                    if (mask[idx] != 0) {
                        overlaps = true;
                        break;
                    }
                    cells.push_back(idx);
                }
            }
        }
        if (overlaps || cells.empty() || filled + cells.size() > hi) {
            ++misses;
            continue;
        }
        for (auto idx : cells) {
            mask[idx] = 1;
        }
        filled += cells.size();
        misses = 0;
    }

    SynthSample sample;
    sample.image = Tensor({1, H, W});
    paint_background(sample.image, config, rng);
    for (std::size_t i = 0; i < N; ++i) {
        // Stored as f32 on disk; quantise now so in-memory and loaded data agree.
        sample.image[i] = mask[i] != 0 ? 1.0 : static_cast<double>(static_cast<float>(sample.image[i]));
    }
    sample.droplet_fraction = double(filled) / double(N);
    sample.grade = grade_of_fraction(sample.droplet_fraction);
    sample.binary_label = binary_label_of_grade(sample.grade);
    sample.seed = sample_seed;
    return sample;
}

std::vector<SynthSample> gen_dataset(const SynthConfig &config, std::size_t workers) {
    config.validate();
    const std::size_t total = 4 * config.per_grade;
    std::vector<SynthSample> samples(total);
    auto make = [&](std::size_t i) {
        const int grade = static_cast<int>(i / config.per_grade);
        samples[i] = gen_sample(config, grade, derive_seed(config.seed, i));
    };
    workers = std::max<std::size_t>(1, std::min(workers, total));
    if (workers == 1) {
        for (std::size_t i = 0; i < total; ++i) {
            make(i);
        }
        return samples;
    }
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t t = 0; t < workers; ++t) {
        threads.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < total; i += workers) {
                    make(i);
                }
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto &th : threads) {
        th.join();
    }
    for (auto &e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return samples;
}

Dataset to_dataset(const std::vector<SynthSample> &samples) {
    Dataset d;
    d.inputs.reserve(samples.size());
    d.labels.reserve(samples.size());
    for (const auto &s : samples) {
        d.inputs.push_back(s.image);
        d.labels.push_back(s.binary_label);
    }
    return d;
}

namespace {

std::string sample_file_name(std::size_t i) {
    std::ostringstream os;
    os << "sample_";
    os.width(5);
    os.fill('0');
    os << i << ".raw";
    return os.str();
}

} // namespace

void save_dataset(const std::filesystem::path &dir, const std::vector<SynthSample> &samples,
                  const SynthConfig &config) {
    std::filesystem::create_directories(dir);
    nlohmann::json index;
    index["format"] = "qfed-synth";
    index["version"] = 1;
    index["height"] = config.height;
    index["width"] = config.width;
    index["config"] = config;
    nlohmann::json entries = nlohmann::json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto &s = samples[i];
        const std::string name = sample_file_name(i);
        std::vector<std::uint8_t> bytes;
        bytes.reserve(8 + 4 * s.image.size());
        put_u32(bytes, static_cast<std::uint32_t>(s.image.dim(1)));
        put_u32(bytes, static_cast<std::uint32_t>(s.image.dim(2)));
        for (double v : s.image.data()) {
            put_f32(bytes, static_cast<float>(v));
        }
        write_file_atomic(dir / name, bytes);
        entries.push_back({{"file", name},
                           {"fraction", s.droplet_fraction},
                           {"grade", s.grade},
                           {"label", label_name(s.binary_label)},
                           {"seed", s.seed}});
    }
    index["samples"] = std::move(entries);
    write_file_atomic(dir / "index.json", index.dump(1));
}

std::vector<SynthSample> load_dataset(const std::filesystem::path &dir) {
    const auto index = nlohmann::json::parse(read_text_file(dir / "index.json"));
    if (index.value("format", "") != "qfed-synth") {
        throw std::runtime_error(dir.string() + "/index.json is not a qfed-synth index");
    }
    std::vector<SynthSample> samples;
    for (const auto &e : index.at("samples")) {
        const auto bytes = read_file(dir / e.at("file").get<std::string>());
        if (bytes.size() < 8) {
            throw std::runtime_error("truncated image file " + e.at("file").get<std::string>());
        }
        const std::size_t h = get_u32(bytes.data()), w = get_u32(bytes.data() + 4);
        if (h == 0 || w == 0 || bytes.size() != 8 + 4 * h * w) {
            throw std::runtime_error("image file " + e.at("file").get<std::string>() +
                                     " does not match its declared " + std::to_string(h) +
                                     "x" + std::to_string(w) + " size");
        }
        SynthSample s;
        s.image = Tensor({1, h, w});
        for (std::size_t i = 0; i < h * w; ++i) {
            s.image[i] = static_cast<double>(get_f32(bytes.data() + 8 + 4 * i));
        }
        s.droplet_fraction = e.at("fraction").get<double>();
        s.grade = e.at("grade").get<int>();
        const auto label = e.at("label").get<std::string>();
        if (label != "transplantable" && label != "non-transplantable") {
            throw std::runtime_error("unknown label '" + label + "' in index.json");
        }
        s.binary_label = label == "transplantable" ? transplantable : non_transplantable;
        s.seed = e.at("seed").get<std::uint64_t>();
        samples.push_back(std::move(s));
    }
    return samples;
}

Dataset load_feature_csv(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    Dataset d;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        std::vector<double> values;
        std::stringstream row(line);
        std::string cell;
        bool numeric = true;
        while (std::getline(row, cell, ',')) {
            char *end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || *end != '\0') {
                numeric = false;
                break;
            }
            values.push_back(v);
        }
        if (!numeric) {
            if (line_no == 1 && d.size() == 0) {
                continue; // header
            }
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": non-numeric cell '" + cell + "'");
        }
        if (values.size() < 2) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": need at least one feature and a label");
        }
        if (width == 0) {
            width = values.size();
        } else if (values.size() != width) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " +
                                     std::to_string(values.size()) + " columns, expected " +
                                     std::to_string(width));
        }
        const double label = values.back();
        if (label != 0.0 && label != 1.0) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": label must be 0 or 1");
        }
        values.pop_back();
        const std::size_t n = values.size();
        d.inputs.push_back(Tensor({n}, std::move(values)));
        d.labels.push_back(static_cast<int>(label));
    }
    if (d.size() == 0) {
        throw std::runtime_error(path.string() + ": no samples");
    }
    return d;
}

namespace {

std::array<std::vector<std::size_t>, 2> by_class(const std::vector<int> &labels, Rng &rng) {
    std::array<std::vector<std::size_t>, 2> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out.at(static_cast<std::size_t>(labels[i])).push_back(i);
    }
    for (auto &v : out) {
        std::shuffle(v.begin(), v.end(), rng);
    }
    return out;
}

} // namespace

std::vector<Split> kfold_splits(const std::vector<int> &labels, std::size_t k,
                                std::uint64_t seed) {
    if (k < 2) {
        throw std::invalid_argument("kfold_splits: k must be >= 2, got " + std::to_string(k));
    }
    Rng rng(seed);
    const auto classes = by_class(labels, rng);
    for (std::size_t c = 0; c < 2; ++c) {
        if (classes[c].size() % k != 0) {
            throw std::invalid_argument("kfold_splits: class " + std::to_string(c) + " has " +
                                        std::to_string(classes[c].size()) +
                                        " samples, not divisible by k=" + std::to_string(k));
        }
    }
    std::vector<Split> folds(k);
    for (std::size_t c = 0; c < 2; ++c) {
        const std::size_t per_fold = classes[c].size() / k;
        for (std::size_t i = 0; i < classes[c].size(); ++i) {
            const std::size_t fold = i / per_fold;
            for (std::size_t f = 0; f < k; ++f) {
                (f == fold ? folds[f].test : folds[f].train).push_back(classes[c][i]);
            }
        }
    }
    for (auto &f : folds) {
        std::sort(f.train.begin(), f.train.end());
        std::sort(f.test.begin(), f.test.end());
    }
    return folds;
}

Split holdout_split(const std::vector<int> &labels, std::size_t test_count, std::uint64_t seed) {
    if (test_count % 2 != 0) {
        throw std::invalid_argument("holdout_split: test count must be even");
    }
    Rng rng(seed);
    const auto classes = by_class(labels, rng);
    const std::size_t per_class = test_count / 2;
    Split s;
    for (std::size_t c = 0; c < 2; ++c) {
        if (classes[c].size() < per_class) {
            throw std::invalid_argument("holdout_split: class " + std::to_string(c) + " has " +
                                        std::to_string(classes[c].size()) + " samples, need " +
                                        std::to_string(per_class));
        }
        for (std::size_t i = 0; i < classes[c].size(); ++i) {
            (i < per_class ? s.test : s.train).push_back(classes[c][i]);
        }
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

std::vector<std::size_t> balanced_subset(const std::vector<int> &labels, std::size_t count,
                                         std::uint64_t seed) {
    if (count % 2 != 0) {
        throw std::invalid_argument("balanced_subset: count must be even");
    }
    Rng rng(seed);
    const auto classes = by_class(labels, rng);
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < 2; ++c) {
        if (classes[c].size() < count / 2) {
            throw std::invalid_argument("balanced_subset: class " + std::to_string(c) +
                                        " has only " + std::to_string(classes[c].size()) +
                                        " samples, need " + std::to_string(count / 2));
        }
        out.insert(out.end(), classes[c].begin(),
                   classes[c].begin() + static_cast<std::ptrdiff_t>(count / 2));
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace qfed
