#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "abd/dataio.hpp"

using namespace abd;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  auto p = fs::temp_directory_path() / ("abd_test_" + name);
  return p;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p);
  out << content;
}

FeatureSequence random_features(std::uint64_t seed, std::size_t n, std::size_t dim = 8) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  FeatureSequence f;
  f.frames = Tensor2(n, dim);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t c = 0; c < dim; ++c) f.frames(t, c) = 1.5 * g(rng) + 0.3;
  return f;
}

}  // namespace

TEST_CASE("load_features parses a small valid file") {
  auto p = temp_file("feat_ok.csv");
  std::string row;
  for (int c = 0; c < 88; ++c) row += (c ? ",1.5" : "1.5");
  write_file(p, row + "\n" + row + "\n" + row + "\n");
  auto f = load_features(p);
  CHECK(f.length() == 3);
  CHECK(f.dim() == 88);
  CHECK(f.frames(1, 87) == 1.5);
}

TEST_CASE("load_features rejects short rows naming the line") {
  auto p = temp_file("feat_short.csv");
  std::string good, bad;
  for (int c = 0; c < 88; ++c) good += (c ? ",1" : "1");
  for (int c = 0; c < 87; ++c) bad += (c ? ",1" : "1");
  write_file(p, good + "\n" + bad + "\n");
  try {
    load_features(p);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
}

TEST_CASE("load_features rejects NaN cells") {
  auto p = temp_file("feat_nan.csv");
  std::string row;
  for (int c = 0; c < 88; ++c) row += (c ? ",0" : "NaN");
  write_file(p, row + "\n");
  CHECK_THROWS_AS(load_features(p), DataError);
}

TEST_CASE("load_features missing file") {
  CHECK_THROWS_AS(load_features("/nonexistent/features.csv"), DataError);
}

TEST_CASE("window spec validation") {
  CHECK_THROWS_AS((WindowSpec{0, 1}.validate()), ConfigError);
  CHECK_THROWS_AS((WindowSpec{5, 10}.validate()), ConfigError);
  CHECK_THROWS_AS((WindowSpec{10, 3}.validate()), ConfigError);
  CHECK_NOTHROW((WindowSpec{100, 5}.validate()));
  CHECK(WindowSpec{100, 5}.rows() == 41);
}

TEST_CASE("extract_window undilated interior") {
  auto f = random_features(0, 100);
  auto ex = extract_window(f, 5, WindowSpec{2, 1});
  REQUIRE(ex.window.rows() == 5);
  for (int r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < f.dim(); ++c)
      CHECK(ex.window(r, c) == f.frames(3 + r, c));
}

TEST_CASE("extract_window dilated taps") {
  auto f = random_features(1, 100);
  auto ex = extract_window(f, 10, WindowSpec{4, 2});
  REQUIRE(ex.window.rows() == 5);
  const int srcs[] = {6, 8, 10, 12, 14};
  for (int r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < f.dim(); ++c)
      CHECK(ex.window(r, c) == f.frames(srcs[r], c));
}

TEST_CASE("extract_window zero-pads outside the recording") {
  auto f = random_features(2, 10);
  auto ex = extract_window(f, 0, WindowSpec{2, 1});
  for (int r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < f.dim(); ++c) CHECK(ex.window(r, c) == 0.0);
  for (std::size_t c = 0; c < f.dim(); ++c) {
    CHECK(ex.window(2, c) == f.frames(0, c));
    CHECK(ex.window(3, c) == f.frames(1, c));
    CHECK(ex.window(4, c) == f.frames(2, c));
  }
}

TEST_CASE("dilated window equals undilated window of the strided subsequence") {
  auto f = random_features(3, 200, 6);
  const WindowSpec spec{30, 3};
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(rng() % 200);
    auto dilated = extract_window(f, n, spec);
    // Strided subsequence through n: frames {..., n-3, n, n+3, ...}.
    FeatureSequence strided;
    std::vector<std::ptrdiff_t> idx;
    for (std::ptrdiff_t k = n % 3 == 0 ? 0 : (n % 3); k < 200; k += 3) idx.push_back(k);
    strided.frames = Tensor2(idx.size(), f.dim());
    std::ptrdiff_t center = -1;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] == n) center = static_cast<std::ptrdiff_t>(i);
      for (std::size_t c = 0; c < f.dim(); ++c)
        strided.frames(i, c) = f.frames(static_cast<std::size_t>(idx[i]), c);
    }
    REQUIRE(center >= 0);
    auto undilated = extract_window(strided, center, WindowSpec{10, 1});
    CHECK(dilated.window == undilated.window);
  }
}

TEST_CASE("make_examples yields one labeled example per frame") {
  SynthConfig cfg;
  cfg.length = 300;
  cfg.n_channels = 8;
  auto rec = synth_recording(5, cfg, 0.002);
  auto examples = make_examples(rec, WindowSpec{10, 1});
  REQUIRE(examples.size() == 300);
  for (std::size_t n = 0; n < examples.size(); ++n) {
    CHECK(examples[n].label == rec.labels.values[n]);
    for (std::size_t c = 0; c < 8; ++c)
      CHECK(examples[n].window(10, c) == rec.features.frames(n, c));
  }
}

TEST_CASE("fit_normalizer centers and scales") {
  auto f = random_features(4, 500);
  auto nz = fit_normalizer(std::vector<FeatureSequence>{f});
  auto g = apply_normalizer(nz, f);
  for (std::size_t c = 0; c < g.dim(); ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t t = 0; t < g.length(); ++t) mean += g.frames(t, c);
    mean /= static_cast<double>(g.length());
    for (std::size_t t = 0; t < g.length(); ++t) {
      const double d = g.frames(t, c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(g.length());
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::sqrt(var) == Catch::Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("zero-variance features pass through unchanged") {
  FeatureSequence f;
  f.frames = Tensor2(10, 3, 0.7);
  auto nz = fit_normalizer(std::vector<FeatureSequence>{f});
  auto g = apply_normalizer(nz, f);
  for (std::size_t t = 0; t < 10; ++t)
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(g.frames(t, c) == Catch::Approx(0.0).margin(1e-12));  // mean removed, scale 1
}

TEST_CASE("normalizer column {-1,1} is already standardized") {
  FeatureSequence f;
  f.frames = Tensor2(2, 1);
  f.frames(0, 0) = -1.0;
  f.frames(1, 0) = 1.0;
  auto nz = fit_normalizer(std::vector<FeatureSequence>{f});
  auto g = apply_normalizer(nz, f);
  CHECK(g.frames(0, 0) == Catch::Approx(-1.0).margin(1e-12));
  CHECK(g.frames(1, 0) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("normalizer invert is an inverse on non-degenerate features") {
  auto f = random_features(6, 200);
  auto nz = fit_normalizer(std::vector<FeatureSequence>{f});
  auto g = apply_normalizer(nz, f);
  nz.invert_inplace(g);
  for (std::size_t t = 0; t < f.length(); ++t)
    for (std::size_t c = 0; c < f.dim(); ++c)
      CHECK(g.frames(t, c) == Catch::Approx(f.frames(t, c)).margin(1e-9));
}

TEST_CASE("fit_normalizer requires at least two frames") {
  FeatureSequence f;
  f.frames = Tensor2(1, 4, 1.0);
  CHECK_THROWS_AS(fit_normalizer(std::vector<FeatureSequence>{f}), DataError);
}

TEST_CASE("synth_recording is deterministic given the seed") {
  SynthConfig cfg;
  cfg.length = 400;
  cfg.n_channels = 12;
  auto a = synth_recording(42, cfg, 0.002);
  auto b = synth_recording(42, cfg, 0.002);
  CHECK(a.features.frames == b.features.frames);
  CHECK(a.contour.values == b.contour.values);
  CHECK(a.labels.values == b.labels.values);
  auto c = synth_recording(43, cfg, 0.002);
  CHECK(a.features.frames.data() != c.features.frames.data());
}

TEST_CASE("noiseless coupled recording is separable by a stump at zero half-window") {
  SynthConfig cfg;
  cfg.length = 2000;
  cfg.noise_level = 0.0;
  cfg.coupling = 1.0;
  cfg.n_channels = 8;
  cfg.segment_half_window = 0;  // labels degenerate to the thresholded delta
  cfg.signal_lags = {0};
  const double tau = 0.004;
  auto rec = synth_recording(7, cfg, tau);
  // Channel 0 carries d[n]/tau, so |channel0| >= 1 decides the label exactly.
  for (std::size_t n = 0; n < rec.length(); ++n) {
    const int pred = std::abs(rec.features.frames(n, 0)) >= 1.0 ? 1 : 0;
    CHECK(pred == rec.labels.values[n]);
  }
}

TEST_CASE("zero coupling carries no label information in signal channels") {
  SynthConfig cfg;
  cfg.length = 500;
  cfg.coupling = 0.0;
  cfg.n_channels = 8;
  auto rec = synth_recording(11, cfg, 0.002);
  SynthConfig coupled = cfg;
  coupled.coupling = 1.0;
  auto rec2 = synth_recording(11, coupled, 0.002);
  CHECK(rec.labels.values == rec2.labels.values);  // labels depend only on the contour
  bool differs = false;
  for (std::size_t n = 0; n < rec.length() && !differs; ++n)
    differs = rec.features.frames(n, 0) != rec2.features.frames(n, 0);
  CHECK(differs);
}

TEST_CASE("contour and labels CSV round-trip") {
  SynthConfig cfg;
  cfg.length = 200;
  cfg.n_channels = 8;
  auto rec = synth_recording(3, cfg, 0.002);
  auto cp = temp_file("contour.csv");
  auto lp = temp_file("labels.csv");
  write_contour_csv(cp, rec.contour);
  write_labels_csv(lp, rec.labels);
  auto c2 = load_contour(cp);
  CHECK(c2.values == rec.contour.values);
  CHECK(load_labels_csv(lp) == rec.labels.values);
}

TEST_CASE("features CSV round-trip") {
  auto f = random_features(8, 50);
  auto p = temp_file("feat_rt.csv");
  write_features_csv(p, f);
  auto g = load_features(p, 25.0, f.dim());
  CHECK(g.frames == f.frames);
}

TEST_CASE("manifest round-trip and validation") {
  Manifest m;
  m.tau = 0.002;
  m.recordings.push_back({"rec0", "rec0.features.csv", "rec0.contour.csv", "", "s1", "spk1"});
  m.recordings.push_back({"rec1", "rec1.features.csv", "rec1.contour.csv", "", "s2", "spk2"});
  auto p = temp_file("manifest.json");
  save_manifest(p, m);
  auto m2 = load_manifest(p);
  REQUIRE(m2.recordings.size() == 2);
  CHECK(m2.recordings[1].session == "s2");
  CHECK(m2.tau == 0.002);

  write_file(p, "{\"recordings\": \"nope\"}");
  CHECK_THROWS_AS(load_manifest(p), DataError);
  write_file(p, "not json at all");
  CHECK_THROWS_AS(load_manifest(p), DataError);
}
