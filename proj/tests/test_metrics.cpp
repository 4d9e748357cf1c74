#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>

#include "ncap/metrics.hpp"
#include "oracles.hpp"

using namespace ncap;

namespace {

std::string random_string(Rng& rng, std::size_t max_len, char alphabet) {
  std::string s(rng.uniform_index(max_len + 1), 'a');
  for (char& ch : s) ch = static_cast<char>('a' + rng.uniform_index(static_cast<std::size_t>(alphabet)));
  return s;
}

// std::vector<bool> is bit-packed and cannot back a span<const bool>.
class Bools {
 public:
  Bools(std::initializer_list<bool> v) : Bools(v.size()) { std::copy(v.begin(), v.end(), data_.get()); }
  Bools(std::size_t n, bool fill = false) : data_(new bool[n]), n_(n) { std::fill_n(data_.get(), n, fill); }
  bool& operator[](std::size_t i) { return data_[i]; }
  operator std::span<const bool>() const { return {data_.get(), n_}; }

 private:
  std::unique_ptr<bool[]> data_;
  std::size_t n_;
};

Image random_image(Rng& rng, std::size_t h, std::size_t w, std::size_t channels) {
  Image img{h, w, channels, std::vector<double>(h * w * channels)};
  for (double& v : img.pixels) v = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("edit distance worked examples") {
  CHECK(edit_distance("cat", "cat") == 0);
  CHECK(edit_distance("", "abc") == 3);
  CHECK(edit_distance("kitten", "sitting") == 3);
  const std::vector<std::size_t> a{1, 2, 3}, b{1, 3};
  CHECK(edit_distance(a, b) == 1);
}

TEST_CASE("edit distance matches the full table oracle and the metric axioms") {
  Rng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::string a = random_string(rng, 12, 5), b = random_string(rng, 12, 5), c = random_string(rng, 12, 5);
    const std::size_t ab = edit_distance(a, b);
    CHECK(ab == oracle::edit_distance(std::vector<char>(a.begin(), a.end()), std::vector<char>(b.begin(), b.end())));
    CHECK(ab == edit_distance(b, a));
    CHECK(edit_distance(a, c) <= ab + edit_distance(b, c));
    CHECK((ab == 0) == (a == b));
  }
}

TEST_CASE("error rates") {
  const std::vector<std::string> same{"abc", "de"};
  CHECK(error_rates(same, same).wer == 0.0);
  CHECK(error_rates(same, same).cer == 0.0);
  const std::vector<std::string> r1{"ab"}, h1{"ax"};
  CHECK(error_rates(r1, h1).wer == 1.0);
  CHECK(error_rates(r1, h1).cer == 0.5);
  const std::vector<std::string> r2{"abc", "de"}, h2{"abc", "xx"};
  CHECK(error_rates(r2, h2).wer == 0.5);
  CHECK(error_rates(r2, h2).cer == doctest::Approx(0.4));
  const std::vector<std::string> r3{"a"}, h3{"abcd"};
  CHECK(error_rates(r3, h3).cer == 3.0);
  CHECK_THROWS_AS(error_rates(r1, same), DomainError);
}

TEST_CASE("cer is invariant to pair order") {
  Rng rng(9);
  std::vector<std::string> refs, hyps;
  for (int i = 0; i < 50; ++i) {
    refs.push_back(random_string(rng, 10, 4));
    if (refs.back().empty()) refs.back() = "a";
    hyps.push_back(random_string(rng, 10, 4));
  }
  const ErrorRates base = error_rates(refs, hyps);
  std::vector<std::size_t> order(refs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<std::string> pr, ph;
  for (std::size_t i : order) {
    pr.push_back(refs[i]);
    ph.push_back(hyps[i]);
  }
  CHECK(error_rates(pr, ph).cer == base.cer);
  CHECK(error_rates(pr, ph).wer == base.wer);
}

TEST_CASE("pearson") {
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), UndefinedCorrelation);
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), DomainError);
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{1}), DomainError);

  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(2 + rng.uniform_index(50)), y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = rng.normal();
      y[i] = 0.5 * x[i] + rng.normal();
    }
    const double r = pearson(x, y);
    CHECK(std::abs(r - oracle::pearson(x, y)) < 1e-12);
    const double a = rng.uniform(0.1, 10.0), b = rng.normal(0.0, 5.0);
    std::vector<double> pos(y.size()), neg(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      pos[i] = a * y[i] + b;
      neg[i] = -a * y[i] + b;
    }
    CHECK(std::abs(pearson(x, pos) - r) < 1e-12);
    CHECK(std::abs(pearson(x, neg) + r) < 1e-12);
  }
}

TEST_CASE("reliability worked examples") {
  const std::vector<double> ones(5, 1.0);
  const Bools all_right(5, true), all_wrong(5, false);
  CHECK(reliability(ones, all_right, 10).ece == 0.0);
  CHECK(reliability(ones, all_wrong, 10).ece == 1.0);
  const std::vector<double> conf{0.95, 0.55};
  const Bools correct{true, false};
  const ReliabilityReport r = reliability(conf, correct, 10);
  CHECK(r.ece == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(r.total() == 2);
  CHECK(r.bins.size() == 10);
  CHECK(r.bins[9].count == 1);
  CHECK(r.bins[5].count == 1);
}

TEST_CASE("reliability binning is right closed") {
  CHECK(reliability_bin_index(0.0, 10) == 0);
  CHECK(reliability_bin_index(0.1, 10) == 0);
  CHECK(reliability_bin_index(0.1000001, 10) == 1);
  CHECK(reliability_bin_index(1.0, 10) == 9);
  CHECK(reliability_bin_index(0.5, 1) == 0);
  const std::vector<double> bad{1.5};
  const Bools c{true};
  CHECK_THROWS_AS(reliability(bad, c, 10), DomainError);
  CHECK_THROWS_AS(reliability(std::vector<double>{0.5}, c, 0), DomainError);
}

TEST_CASE("reliability counts and ece are consistent") {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> conf(100);
    Bools correct(100);
    for (std::size_t i = 0; i < conf.size(); ++i) {
      conf[i] = rng.uniform();
      correct[i] = rng.uniform() < conf[i];
    }
    const std::size_t n_bins = 1 + rng.uniform_index(15);
    const ReliabilityReport r = reliability(conf, correct, n_bins);
    CHECK(r.total() == conf.size());
    double ece = 0.0;
    for (const auto& b : r.bins) {
      if (b.count > 0) ece += static_cast<double>(b.count) / 100.0 * std::abs(b.accuracy() - b.mean_confidence());
    }
    CHECK(r.ece == doctest::Approx(ece).epsilon(1e-12));
    CHECK(r.ece >= 0.0);
    CHECK(r.ece <= 1.0);

    // replacing each confidence by its bin's accuracy is a fixed point with zero ece
    std::vector<double> recal(conf.size());
    for (std::size_t i = 0; i < conf.size(); ++i) recal[i] = r.bins[reliability_bin_index(conf[i], n_bins)].accuracy();
    const ReliabilityReport fixed = reliability(recal, correct, n_bins);
    CHECK(fixed.ece < 1e-12);
  }
}

TEST_CASE("reliability merge equals pooling") {
  const std::vector<double> c1{0.2, 0.9}, c2{0.95, 0.4, 0.41};
  const Bools k1{false, true}, k2{true, true, false};
  ReliabilityReport a = reliability(c1, k1, 5);
  a.merge(reliability(c2, k2, 5));
  const std::vector<double> all{0.2, 0.9, 0.95, 0.4, 0.41};
  const Bools allk{false, true, true, true, false};
  const ReliabilityReport pooled = reliability(all, allk, 5);
  CHECK(a.ece == doctest::Approx(pooled.ece).epsilon(1e-14));
  CHECK(a.total() == 5);
  CHECK_THROWS_AS(a.merge(reliability(c1, k1, 4)), ShapeError);
}

TEST_CASE("sequence confidences use max probability and the per-sequence product") {
  const std::vector<Matrix> probs{Matrix{{0.7, 0.3}, {0.4, 0.6}}};
  const std::vector<std::vector<std::size_t>> labels{{0, 0}};
  const SequenceConfidences s = sequence_confidences(probs, labels);
  CHECK(s.char_conf == std::vector<double>{0.7, 0.6});
  CHECK(s.char_correct == std::vector<bool>{true, false});
  CHECK(s.word_conf[0] == doctest::Approx(0.42));
  CHECK(s.word_correct[0] == false);
}

TEST_CASE("confidence std") {
  const Matrix same{{0.7, 0.3}, {0.3, 0.7}};
  CHECK(confidence_std(same) == 0.0);
  CHECK(confidence_std(std::vector<double>{0.5, 1.0}) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK_THROWS_AS(confidence_std(std::vector<double>{}), DomainError);
  CHECK_THROWS_AS(confidence_std(Matrix{{0.7, 0.7}}), DomainError);
}

TEST_CASE("psnr") {
  CHECK(psnr_from_mse(0.01) == 20.0);
  CHECK(psnr_from_mse(0.0) == std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(psnr_from_mse(-1.0), DomainError);

  Rng rng(12);
  const Image clean = random_image(rng, 16, 16, 1);
  CHECK(psnr(ImagePair{clean, clean}) == std::numeric_limits<double>::infinity());
  double prev = std::numeric_limits<double>::infinity();
  for (double sigma : {0.01, 0.05, 0.1}) {
    Rng noise(13);
    Image noisy = clean;
    for (double& v : noisy.pixels) v += noise.normal(0.0, sigma);
    const double p = psnr(ImagePair{clean, noisy});
    CHECK(p < prev);
    prev = p;
  }
  ImagePair uniform{Image{4, 4, 1, std::vector<double>(16, 0.2)}, Image{4, 4, 1, std::vector<double>(16, 0.3)}};
  CHECK(mean_squared_error(uniform) == doctest::Approx(0.01).epsilon(1e-14));
}

TEST_CASE("ssim matches the per-window oracle") {
  Rng rng(12);
  for (std::size_t channels : {1, 3}) {
    const Image a = random_image(rng, 13, 17, channels);
    Image b = a;
    for (double& v : b.pixels) v = std::clamp(v + rng.normal(0.0, 0.1), 0.0, 1.0);
    const ImagePair pair{a, b};
    CHECK(std::abs(ssim(pair) - oracle::ssim(pair)) < 1e-9);
    CHECK(ssim(ImagePair{a, a}) == doctest::Approx(1.0).epsilon(1e-12));
  }
  const Image small = random_image(rng, 7, 20, 1);
  CHECK_THROWS_AS(ssim(ImagePair{small, small}), ShapeError);
  CHECK_THROWS_AS(ssim(ImagePair{random_image(rng, 8, 8, 1), random_image(rng, 9, 8, 1)}), ShapeError);
}
