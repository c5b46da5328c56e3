#include <bit>
#include <cstring>
#include <fstream>

#include "doctest.h"
#include "nerd/data.hpp"
#include "nerd/dataset_io.hpp"
#include "nerd/error.hpp"
#include "nerd/volume_io.hpp"
#include "support.hpp"

using namespace nerd;
namespace fs = std::filesystem;

namespace {

Volume ramp(int d, int h, int w, double offset = 0.0) {
  Volume v;
  v.depth = d;
  v.height = h;
  v.width = w;
  v.spacing = {2.0, 0.5, 0.75};
  for (int i = 0; i < d * h * w; ++i) v.values.push_back(offset + i);
  return v;
}

template <class T>
void put_be(std::vector<char>& buf, std::size_t at, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::little) std::reverse(bytes, bytes + sizeof(T));
  std::memcpy(buf.data() + at, bytes, sizeof(T));
}

// Big-endian NIfTI-1 float32 volume laid out by hand.
void write_big_endian_nifti(const fs::path& path, const Volume& v, float slope, float inter) {
  std::vector<char> buf(352, 0);
  put_be<std::int32_t>(buf, 0, 348);
  const std::int16_t dims[8] = {3, std::int16_t(v.width), std::int16_t(v.height), std::int16_t(v.depth), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put_be<std::int16_t>(buf, 40 + 2 * i, dims[i]);
  put_be<std::int16_t>(buf, 70, 16);
  put_be<std::int16_t>(buf, 72, 32);
  const float pix[8] = {1, float(v.spacing[2]), float(v.spacing[1]), float(v.spacing[0]), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put_be<float>(buf, 76 + 4 * i, pix[i]);
  put_be<float>(buf, 108, 352.0f);
  put_be<float>(buf, 112, slope);
  put_be<float>(buf, 116, inter);
  std::memcpy(buf.data() + 344, "n+1", 4);
  for (double x : v.values) {
    buf.resize(buf.size() + 4);
    put_be<float>(buf, buf.size() - 4, static_cast<float>(x));
  }
  std::ofstream(path, std::ios::binary).write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

SynthConfig tiny_synth() {
  SynthConfig c;
  c.height = 32;
  c.width = 32;
  c.band = 6;
  c.blobs_min = 2;
  c.blobs_max = 4;
  c.radius_min = 2;
  c.radius_max = 3;
  c.train = 6;
  c.val = 2;
  c.test = 2;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("slicing and restacking") {
    const Volume v = ramp(3, 2, 4);
    const auto slices = slice_volume(v, "vol");
    REQUIRE(slices.size() == 3);
    CHECK(slices[1].values.front() == 8);
    CHECK(slices[2].index == 2);
    CHECK(slices[0].volume_id == "vol");
    const Volume back = stack_slices(slices, v.spacing);
    CHECK(back.values == v.values);
    CHECK(back.depth == 3);
    CHECK_THROWS_AS(stack_slices({}, v.spacing), InvalidArgument);
  }

  TEST_CASE("center crop examples") {
    Slice2D s;
    s.height = 5;
    s.width = 6;
    for (int i = 0; i < 30; ++i) s.values.push_back(i);
    const auto c = center_crop(s, 2, 3);
    // Odd remainders drop the bottom row and the right column.
    CHECK(c.values == std::vector<double>{7, 8, 9, 13, 14, 15});
    CHECK(center_crop(s, 5, 6).values == s.values);
    Slice2D sq;
    sq.height = sq.width = 6;
    for (int i = 0; i < 36; ++i) sq.values.push_back(i);
    CHECK(center_crop(sq, 4, 4).values.front() == 7);
    CHECK(center_crop(sq, 4, 4).values.back() == 28);
    sq.height = sq.width = 5;
    sq.values.resize(25);
    for (int i = 0; i < 25; ++i) sq.values[i] = i;
    CHECK(center_crop(sq, 4, 4).values.front() == 0);
    CHECK(center_crop(sq, 4, 4).values.back() == 18);
    CHECK_THROWS_AS(center_crop(s, 6, 6), InvalidArgument);
    const Volume v = center_crop(ramp(2, 4, 4), 2, 2);
    CHECK(v.values == std::vector<double>{5, 6, 9, 10, 21, 22, 25, 26});
  }

  TEST_CASE("intensity normalization") {
    std::vector<double> a{2, 4, 6};
    normalize_intensity(a, Normalization::MinMax);
    CHECK(a == std::vector<double>{0, 0.5, 1});
    std::vector<double> z{1, 2, 3};
    normalize_intensity(z, Normalization::ZScore);
    CHECK(z[0] == doctest::Approx(-std::sqrt(1.5)).epsilon(1e-15));
    CHECK(z[1] == 0.0);
    CHECK(z[2] == doctest::Approx(std::sqrt(1.5)).epsilon(1e-15));
    std::vector<double> flat{5, 5, 5};
    normalize_intensity(flat, Normalization::ZScore);
    CHECK(flat == std::vector<double>{0, 0, 0});
    CHECK_THROWS_AS(parse_normalization("l2"), ConfigError);
  }

  TEST_CASE("modalities concatenate in order") {
    Slice2D a, b;
    a.height = b.height = 1;
    a.width = b.width = 2;
    a.values = {1, 2};
    b.values = {3, 4};
    const auto img = concat_modalities({a, b});
    CHECK(img.channels == 2);
    CHECK(img.values == std::vector<double>{1, 2, 3, 4});
    b.width = 1;
    b.values = {3};
    CHECK_THROWS_AS(concat_modalities({a, b}), InvalidArgument);
  }

  TEST_CASE("synth config validation") {
    SynthConfig c = tiny_synth();
    c.band = 16;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_synth();
    c.train = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_synth();
    c.radius_max = 20;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(synth_config_from_json({{"rule", "diagonal"}}), ConfigError);
    CHECK_THROWS_AS(synth_config_from_json({{"colour", 1}}), ConfigError);
    const auto j = to_json(tiny_synth());
    CHECK(to_json(synth_config_from_json(j)) == j);
  }

  TEST_CASE("crowded images fail to generate") {
    SynthConfig c = tiny_synth();
    c.height = c.width = 16;
    c.band = 2;
    c.blobs_min = c.blobs_max = 30;
    c.max_retries = 20;
    CHECK_THROWS_AS(generate_border_bias(c), GenerationError);
  }

  TEST_CASE("band membership and label rules") {
    CHECK(in_border_band(0, 10, 32, 32, 4));
    CHECK(in_border_band(10, 28, 32, 32, 4));
    CHECK_FALSE(in_border_band(4, 27, 32, 32, 4));
    SynthConfig c = tiny_synth();
    c.band = 4;
    CHECK(blob_is_foreground(2, 2, c, BandRule::Border));
    CHECK_FALSE(blob_is_foreground(2, 2, c, BandRule::Center));
    CHECK(blob_is_foreground(16, 16, c, BandRule::Center));
    const auto label = rasterize_labels({{2, 2, 1, true}, {8, 8, 2, false}}, 10, 10);
    int fg = 0;
    for (auto v : label) fg += v;
    CHECK(fg == 5);
    CHECK(label[2 * 10 + 3] == 1);
  }

  TEST_CASE("synthetic data is deterministic and rule consistent") {
    for (auto rule : {BandRule::Border, BandRule::Center}) {
      SynthConfig c = tiny_synth();
      c.rule = rule;
      const Dataset a = generate_border_bias(c), b = generate_border_bias(c);
      REQUIRE(a.volumes.size() == 10);
      CHECK(a.slices(Split::Train).size() == 6);
      for (std::size_t v = 0; v < a.volumes.size(); ++v) {
        const auto& sa = a.volumes[v].slices[0];
        CHECK(sa.image == b.volumes[v].slices[0].image);
        CHECK(sa.label == b.volumes[v].slices[0].label);
        std::vector<Blob> blobs;
        for (const auto& e : a.volumes[v].slice_meta[0]["blobs"]) {
          Blob blob{e[0], e[1], e[2], e[3] == 1};
          CHECK(blob.foreground == blob_is_foreground(blob.cy, blob.cx, c, rule));
          blobs.push_back(blob);
        }
        CHECK(blobs.size() >= 2);
        CHECK(rasterize_labels(blobs, c.height, c.width) == sa.label);
        for (float x : sa.image) CHECK((x >= 0.0f && x <= 1.0f));
      }
    }
    SynthConfig c = tiny_synth();
    c.seed = 12;
    CHECK(generate_border_bias(c).volumes[0].slices[0].image !=
          generate_border_bias(tiny_synth()).volumes[0].slices[0].image);
  }

  TEST_CASE("random rule resolves from the seed and is recorded") {
    int border = 0;
    for (std::uint64_t s = 0; s < 40; ++s) {
      SynthConfig c = tiny_synth();
      c.seed = s;
      border += resolved_rule(c) == BandRule::Border;
      CHECK(resolved_rule(c) == resolved_rule(c));
    }
    CHECK(border > 0);
    CHECK(border < 40);
    const Dataset d = generate_border_bias(tiny_synth());
    CHECK(d.source["resolved_rule"].is_string());
  }

  TEST_CASE("dataset write, read and idempotent rewrite") {
    const auto dir = test::scratch_dir("data_rw");
    const Dataset d = generate_border_bias(tiny_synth());
    const WriteStats first = write_dataset(d, dir);
    CHECK(first.written == 11);
    CHECK(first.skipped == 0);
    const auto stamp = fs::last_write_time(dir / slice_relpath("train", "train_0000", 0));
    const WriteStats second = write_dataset(d, dir);
    CHECK(second.written == 0);
    CHECK(second.skipped == 11);
    CHECK(fs::last_write_time(dir / slice_relpath("train", "train_0000", 0)) == stamp);

    const Dataset r = read_dataset(dir, true);
    REQUIRE(r.volumes.size() == d.volumes.size());
    for (std::size_t v = 0; v < d.volumes.size(); ++v) {
      CHECK(r.volumes[v].id == d.volumes[v].id);
      CHECK(r.volumes[v].split == d.volumes[v].split);
      CHECK(r.volumes[v].slices[0].image == d.volumes[v].slices[0].image);
      CHECK(r.volumes[v].slices[0].label == d.volumes[v].slices[0].label);
    }
    std::ofstream(dir / slice_relpath("test", "test_0000", 0), std::ios::binary | std::ios::app) << 'x';
    CHECK_THROWS(read_dataset(dir, true));
    CHECK_THROWS_AS(read_dataset(dir / "nope"), IoError);
  }

  TEST_CASE("slice and mask codecs") {
    SliceSample s;
    s.height = 2;
    s.width = 3;
    s.channels = 2;
    s.image = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    s.label = {0, 1, 0, 1, 1, 0};
    const auto back = decode_slice(encode_slice(s), "mem");
    CHECK(back.image == s.image);
    CHECK(back.label == s.label);
    auto bytes = encode_slice(s);
    bytes[0] = 'X';
    CHECK_THROWS(decode_slice(bytes, "mem"));
    int h = 0, w = 0;
    CHECK(decode_mask(encode_mask(s.label, 2, 3), h, w, "mem") == s.label);
    CHECK(h == 2);
    CHECK(w == 3);
  }

  TEST_CASE("volume formats round trip") {
    const auto dir = test::scratch_dir("data_vol");
    Volume v = ramp(3, 4, 5, -7.25);
    write_nifti(dir / "a.nii", v);
    write_nifti(dir / "a.nii.gz", v);
    write_raw_volume(dir / "a.raw", v);
    for (const char* name : {"a.nii", "a.nii.gz", "a.raw"}) {
      const Volume r = read_volume(dir / name);
      CHECK(r.depth == 3);
      CHECK(r.height == 4);
      CHECK(r.width == 5);
      CHECK(r.values == v.values);
      CHECK(r.spacing == v.spacing);
    }
    write_big_endian_nifti(dir / "be.nii", v, 2.0f, 1.0f);
    const Volume be = read_nifti(dir / "be.nii");
    REQUIRE(be.values.size() == v.values.size());
    for (std::size_t i = 0; i < v.values.size(); ++i) CHECK(be.values[i] == 2.0 * v.values[i] + 1.0);
    CHECK(be.spacing == v.spacing);
    CHECK_THROWS_AS(read_volume(dir / "a.png"), Error);
    CHECK_THROWS_AS(read_volume(dir / "missing.nii"), IoError);
  }

  TEST_CASE("prepare crops, normalizes and stacks two modalities") {
    const auto dir = test::scratch_dir("data_prep");
    for (const char* id : {"s1", "s2"}) {
      Volume t1 = ramp(2, 170, 230), flair = ramp(2, 170, 230, 100.0), label = ramp(2, 170, 230);
      for (auto& x : flair.values) x *= 3;
      for (std::size_t i = 0; i < label.values.size(); ++i) label.values[i] = double(i % 3);
      write_nifti(dir / (std::string(id) + "_t1.nii.gz"), t1);
      write_nifti(dir / (std::string(id) + "_flair.nii"), flair);
      write_nifti(dir / (std::string(id) + "_label.nii.gz"), label);
    }
    nlohmann::json manifest = {
        {"modalities", {"T1", "FLAIR"}},
        {"crop", {160, 224}},
        {"label_foreground", {1}},
        {"volumes",
         {{{"id", "s1"}, {"split", "train"}, {"images", {{"T1", "s1_t1.nii.gz"}, {"FLAIR", "s1_flair.nii"}}}, {"label", "s1_label.nii.gz"}},
          {{"id", "s2"}, {"split", "test"}, {"images", {{"T1", "s2_t1.nii.gz"}, {"FLAIR", "s2_flair.nii"}}}, {"label", "s2_label.nii.gz"}}}}};
    std::ofstream(dir / "manifest.json") << manifest.dump();
    const Dataset d = prepare_dataset(read_prepare_manifest(dir / "manifest.json"));
    CHECK(d.height == 160);
    CHECK(d.width == 224);
    CHECK(d.channels == 2);
    REQUIRE(d.volumes.size() == 2);
    const auto& s = d.volumes[0].slices[1];
    CHECK(s.image.size() == 2u * 160 * 224);
    // Both modalities are ramps, so per-volume min-max maps them identically.
    CHECK(std::equal(s.image.begin(), s.image.begin() + 160 * 224, s.image.begin() + 160 * 224));
    float lo = 1, hi = 0;
    for (const auto& sl : d.volumes[0].slices)
      for (float x : sl.image) lo = std::min(lo, x), hi = std::max(hi, x);
    CHECK(lo == 0.0f);
    CHECK(hi == 1.0f);
    // Label value 1 only: crop starts at row 5, column 3.
    const std::size_t first = static_cast<std::size_t>(170 * 230) + 5 * 230 + 3;
    CHECK(s.label[0] == ((first % 3) == 1 ? 1 : 0));

    manifest["volumes"][1]["images"]["FLAIR"] = "gone.nii";
    std::ofstream(dir / "manifest.json") << manifest.dump();
    try {
      prepare_dataset(read_prepare_manifest(dir / "manifest.json"));
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("gone.nii") != std::string::npos);
    }
  }
}
