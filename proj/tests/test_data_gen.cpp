#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "doctest.h"
#include "mdseg/pgm.hpp"
#include "mdseg/phantom.hpp"
#include "oracles.hpp"

using namespace mdseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mdseg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

double supersampled_area(const ShapeParams& s, int res, int n = 8) {
  double a = 0;
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a += s.contains(x + (j + 0.5) / n, y + (i + 0.5) / n);
  return a / (n * n);
}

DatasetConfig small_config(int n_train, int n_test) {
  auto c = DatasetConfig::default_config();
  c.domains.resize(2);
  for (auto& d : c.domains) {
    d.n_train = n_train;
    d.n_test = n_test;
  }
  return c;
}

}  // namespace

TEST_CASE("generate_sample is deterministic per rng state") {
  for (const auto& dc : DatasetConfig::default_config().domains) {
    Rng a(42), b(42);
    auto s1 = generate_sample(dc.spec, 64, a, 1);
    auto s2 = generate_sample(dc.spec, 64, b, 1);
    CHECK(s1.image == s2.image);
    CHECK(s1.mask == s2.mask);
    CHECK(s1.domain == 1);
    CHECK(s1.image.shape() == std::vector<int>{1, 64, 64});
  }
  Rng r(1);
  CHECK_THROWS_AS(generate_sample(DatasetConfig::default_config().domains[0].spec, 16, r), ConfigError);
}

TEST_CASE("rasterized area tracks the continuous shape area") {
  for (const auto& dc : DatasetConfig::default_config().domains) {
    Rng rng(7);
    for (int i = 0; i < 20; ++i) {
      const auto shape = sample_shape(dc.spec, 64, rng);
      CHECK(shape.radius / 64 >= dc.spec.size_min - 1e-12);
      CHECK(shape.radius / 64 <= dc.spec.size_max + 1e-12);
      const Mask m = rasterize(shape, 64);
      const double cont = supersampled_area(shape, 64);
      // Pixel-centre sampling errs by at most about half a pixel along the boundary.
      const double tol = 0.5 * 2.0 * M_PI * shape.radius * 1.6 + 4.0;
      CHECK(std::abs(static_cast<double>(m.count()) - cont) <= tol);
      if (shape.family != ShapeFamily::BilobedBlob) CHECK(std::abs(cont - shape.area()) <= 0.02 * shape.area() + 2.0);
      CHECK(oracle::component_sizes(m).size() == 1);
    }
  }
}

TEST_CASE("clean render separates interior and exterior means") {
  for (const auto& dc : DatasetConfig::default_config().domains) {
    Rng rng(3);
    const auto shape = sample_shape(dc.spec, 64, rng);
    const Mask m = rasterize(shape, 64);
    const auto img = render_clean(shape, m, dc.spec, 64);
    double in = 0, out = 0;
    std::size_t ni = 0, no = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        if (m(y, x)) {
          in += img.at(0, y, x);
          ++ni;
        } else {
          out += img.at(0, y, x);
          ++no;
        }
      }
    in /= static_cast<double>(ni);
    out /= static_cast<double>(no);
    if (dc.spec.interior_mean > dc.spec.exterior_mean) {
      CHECK(in > out);
    } else {
      CHECK(in < out);
    }
  }
}

TEST_CASE("speckle: identity at zero strength, unit mean and matching variance") {
  Rng rng(5);
  Tensor<float> img({1, 32, 32}, 0.4f);
  CHECK(apply_speckle(img, rng, 0.0) == img);

  const double strength = 0.06;
  Tensor<float> base({1, 1000, 1000}, 0.25f);
  const auto noisy = apply_speckle(base, rng, strength);
  double sum = 0, sq = 0;
  for (float v : noisy.storage()) {
    const double n = v / 0.25;
    sum += n;
    sq += n * n;
  }
  const double count = 1e6, mean = sum / count, var = sq / count - mean * mean;
  CHECK(std::abs(mean - 1.0) <= 0.01);
  CHECK(std::abs(var - strength) <= 0.05 * strength);
}

TEST_CASE("shadow: unit factor is identity, wedge darkens, outside untouched") {
  Rng rng(8);
  Tensor<float> img({1, 64, 64}, 0.6f);
  ShadowParams unit;
  unit.factor_min = unit.factor_max = 1.0;
  CHECK(apply_shadow(img, rng, unit) == img);

  for (int t = 0; t < 10; ++t) {
    ShadowWedge w;
    const auto out = apply_shadow(img, rng, ShadowParams{}, &w);
    double in_sum = 0;
    std::size_t in_n = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        if (w.contains(x, y)) {
          in_sum += out.at(0, y, x);
          ++in_n;
        } else {
          CHECK(out.at(0, y, x) == img.at(0, y, x));
        }
      }
    REQUIRE(in_n > 0);
    CHECK(in_sum / static_cast<double>(in_n) < 0.6);
  }
}

TEST_CASE("domain spec validation") {
  auto spec = DatasetConfig::default_config().domains[0].spec;
  spec.exterior_mean = spec.interior_mean + 0.1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = DatasetConfig::default_config().domains[1].spec;
  spec.size_min = spec.size_max + 0.01;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  CHECK(DatasetConfig::scarce_config().domains[2].n_train == 20);
}

TEST_CASE("generate_dataset: counts, determinism, stream separation, loading") {
  const auto dir = temp_dir("gen");
  const auto m = generate_dataset(small_config(10, 5), 1, (dir / "a").string());
  CHECK(m.entries.size() == 30);
  std::size_t pgm = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) pgm += e.path().extension() == ".pgm";
  CHECK(pgm == 60);
  CHECK(fs::exists(dir / "a" / "manifest.json"));

  generate_dataset(small_config(10, 5), 1, (dir / "b").string());
  generate_dataset(small_config(10, 8), 1, (dir / "c").string());
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "a");
    CHECK(slurp(e.path()) == slurp(dir / "b" / rel));
    if (rel.string().rfind("train", 0) == 0) CHECK(slurp(e.path()) == slurp(dir / "c" / rel));
  }

  const Dataset train = load_dataset((dir / "a").string(), Split::Train);
  const Dataset mem = generate_split(small_config(10, 5), 1, Split::Train);
  REQUIRE(train.num_domains() == 2);
  for (int d = 0; d < 2; ++d) {
    REQUIRE(train.count(d) == 10);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(train.samples[d][i].image == mem.samples[d][i].image);
      CHECK(train.samples[d][i].mask == mem.samples[d][i].mask);
      CHECK(train.samples[d][i].domain == d);
      CHECK(oracle::component_sizes(train.samples[d][i].mask).size() == 1);
    }
  }
  CHECK(load_dataset((dir / "a").string(), Split::Test).count(1) == 5);
  fs::remove_all(dir);
}

TEST_CASE("generate_dataset reports filesystem errors with the path") {
  const auto dir = temp_dir("ro");
  std::ofstream(dir / "file") << "x";
  try {
    generate_dataset(small_config(1, 1), 1, (dir / "file" / "sub").string());
    FAIL("expected FilesystemError");
  } catch (const FilesystemError& e) {
    CHECK(e.path().find("file") != std::string::npos);
  }
  CHECK_THROWS_AS(read_manifest((dir / "missing").string()), FilesystemError);
  fs::remove_all(dir);
}

TEST_CASE("pgm encode/decode round trip, comments and errors") {
  GrayImage g{3, 2, {0, 10, 20, 30, 40, 255}};
  const auto bytes = encode_pgm(g);
  const auto back = decode_pgm(bytes);
  CHECK(back.width == 3);
  CHECK(back.height == 2);
  CHECK(back.pixels == g.pixels);

  const std::string text = "P5\n# comment\n3 2\n# another\n255\n";
  std::vector<std::uint8_t> with(text.begin(), text.end());
  with.insert(with.end(), g.pixels.begin(), g.pixels.end());
  CHECK(decode_pgm(with).pixels == g.pixels);

  std::vector<std::uint8_t> p2{'P', '2', '\n'};
  try {
    decode_pgm(p2);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }
  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_pgm(truncated), FormatError);
  CHECK_THROWS_AS(read_pgm("/nonexistent/x.pgm"), FilesystemError);

  Mask m(2, 2);
  m(1, 0) = 1;
  const auto mg = mask_to_gray(m);
  CHECK(mg.pixels == std::vector<std::uint8_t>{0, 0, 255, 0});
  CHECK(mask_from_gray(mg) == m);
  const auto t = from_gray(g);
  CHECK(to_gray(t).pixels == g.pixels);
}
