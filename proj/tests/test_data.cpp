#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "test_util.hpp"

using namespace engageformer;
using testutil::TempDir;

namespace {

std::vector<char> slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(is), {});
}

void spit(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream os(path, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_test_ppm(const std::string& path, std::size_t w, std::size_t h,
                    unsigned char base, bool with_comment = false) {
    std::ofstream os(path, std::ios::binary);
    os << "P6\n";
    if (with_comment) os << "# synthetic test frame\n";
    os << w << " " << h << "\n255\n";
    for (std::size_t i = 0; i < w * h * 3; ++i)
        os.put(static_cast<char>((base + i) % 256));
}

}  // namespace

TEST(Clip, RoundTripPreservesBytes) {
    TempDir tmp;
    Rng r(5);
    Tensor<float> clip({3, 4, 5, 3});
    for (std::size_t i = 0; i < clip.numel(); ++i)
        clip[i] = static_cast<float>(r.next_u64() % 256);
    const std::string path = tmp.file("c.efv");
    write_clip(path, clip);
    Tensor<float> back = read_clip<float>(path);
    ASSERT_EQ(back.shape(), clip.shape());
    for (std::size_t i = 0; i < clip.numel(); ++i) ASSERT_EQ(back[i], clip[i]);
    // Header: magic + 4 u32 extents, then one byte per value.
    EXPECT_EQ(std::filesystem::file_size(path), 4 + 16 + clip.numel());
}

TEST(Clip, WriteRejectsBadTensors) {
    TempDir tmp;
    Tensor<float> flat({2, 3}, {0, 1, 2, 3, 4, 5});
    EXPECT_THROW(write_clip(tmp.file("x.efv"), flat), DataError);
    Tensor<float> neg({1, 1, 1, 1}, {-3.0f});
    EXPECT_THROW(write_clip(tmp.file("y.efv"), neg), DataError);
    Tensor<float> big({1, 1, 1, 1}, {256.0f});
    EXPECT_THROW(write_clip(tmp.file("z.efv"), big), DataError);
}

TEST(Clip, ThreeDistinctReadFailures) {
    TempDir tmp;
    Tensor<float> clip({1, 2, 2, 1}, {1, 2, 3, 4});
    write_clip(tmp.file("ok.efv"), clip);
    std::vector<char> bytes = slurp(tmp.file("ok.efv"));

    std::vector<char> wrong_magic = bytes;
    wrong_magic[0] = 'X';
    spit(tmp.file("m.efv"), wrong_magic);
    std::vector<char> short_payload = bytes;
    short_payload.pop_back();
    spit(tmp.file("s.efv"), short_payload);
    std::vector<char> long_payload = bytes;
    long_payload.push_back(9);
    spit(tmp.file("l.efv"), long_payload);

    auto message_of = [](const std::string& p) {
        try {
            read_clip<float>(p);
        } catch (const DataError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    const std::string m1 = message_of(tmp.file("m.efv"));
    const std::string m2 = message_of(tmp.file("s.efv"));
    const std::string m3 = message_of(tmp.file("l.efv"));
    EXPECT_NE(m1.find("magic"), std::string::npos) << m1;
    EXPECT_NE(m2.find("truncated"), std::string::npos) << m2;
    EXPECT_NE(m3.find("longer"), std::string::npos) << m3;
    EXPECT_THROW(read_clip<float>(tmp.file("absent.efv")), DataError);
}

TEST(Clip, NormalizeMapsPixelsToUnitRange) {
    Tensor<double> clip({1, 1, 3, 1}, {0, 127.5, 255});
    Tensor<double> n = normalize_clip(clip);
    EXPECT_DOUBLE_EQ(n[0], -1.0);
    EXPECT_DOUBLE_EQ(n[1], 0.0);
    EXPECT_DOUBLE_EQ(n[2], 1.0);
}

TEST(Ppm, ReadsPixelsAndSkipsComments) {
    TempDir tmp;
    write_test_ppm(tmp.file("a.ppm"), 3, 2, 10, /*with_comment=*/true);
    PpmImage img = read_ppm(tmp.file("a.ppm"));
    EXPECT_EQ(img.width, 3u);
    EXPECT_EQ(img.height, 2u);
    ASSERT_EQ(img.rgb.size(), 18u);
    for (std::size_t i = 0; i < img.rgb.size(); ++i) EXPECT_EQ(img.rgb[i], 10 + i);
}

TEST(Ppm, RejectsForeignOrBrokenFiles) {
    TempDir tmp;
    {
        std::ofstream os(tmp.file("p5.ppm"), std::ios::binary);
        os << "P5\n2 2\n255\n";
        os.write("\0\0\0\0", 4);
    }
    EXPECT_THROW(read_ppm(tmp.file("p5.ppm")), DataError);
    {
        std::ofstream os(tmp.file("deep.ppm"), std::ios::binary);
        os << "P6\n2 2\n65535\n";
    }
    EXPECT_THROW(read_ppm(tmp.file("deep.ppm")), DataError);
    {
        std::ofstream os(tmp.file("cut.ppm"), std::ios::binary);
        os << "P6\n2 2\n255\n";
        os.write("abc", 3);  // needs 12 payload bytes
    }
    EXPECT_THROW(read_ppm(tmp.file("cut.ppm")), DataError);
    EXPECT_THROW(read_ppm(tmp.file("missing.ppm")), DataError);
}

TEST(Ppm, IngestStacksFramesInNameOrder) {
    TempDir tmp;
    std::filesystem::create_directories(tmp.file("seq"));
    // Deliberately created out of order; names must win.
    write_test_ppm(tmp.file("seq/f2.ppm"), 2, 2, 200);
    write_test_ppm(tmp.file("seq/f0.ppm"), 2, 2, 0);
    write_test_ppm(tmp.file("seq/f1.ppm"), 2, 2, 100);
    spit(tmp.file("seq/notes.txt"), {'h', 'i'});  // ignored: wrong extension
    Tensor<float> clip = ingest_ppm_sequence<float>(tmp.file("seq"));
    ASSERT_EQ(clip.shape(), (Shape{3, 2, 2, 3}));
    EXPECT_EQ(clip[0], 0.0f);
    EXPECT_EQ(clip[12], 100.0f);  // second frame starts at h*w*3
    EXPECT_EQ(clip[24], 200.0f);
}

TEST(Ppm, IngestSubsamplesByFloorRatio) {
    TempDir tmp;
    std::filesystem::create_directories(tmp.file("seq"));
    for (int i = 0; i < 5; ++i)
        write_test_ppm(tmp.file("seq/f" + std::to_string(i) + ".ppm"), 2, 1,
                       static_cast<unsigned char>(i * 10));
    Tensor<float> clip = ingest_ppm_sequence<float>(tmp.file("seq"), 2);
    ASSERT_EQ(clip.extent(0), 2u);
    // pick[i] = i * 5 / 2 -> frames 0 and 2.
    EXPECT_EQ(clip[0], 0.0f);
    EXPECT_EQ(clip[6], 20.0f);
}

TEST(Ppm, IngestRejectsBadSequences) {
    TempDir tmp;
    std::filesystem::create_directories(tmp.file("few"));
    write_test_ppm(tmp.file("few/a.ppm"), 2, 2, 0);
    EXPECT_THROW(ingest_ppm_sequence<float>(tmp.file("few"), 4), DataError);
    std::filesystem::create_directories(tmp.file("mix"));
    write_test_ppm(tmp.file("mix/a.ppm"), 2, 2, 0);
    write_test_ppm(tmp.file("mix/b.ppm"), 3, 2, 0);
    EXPECT_THROW(ingest_ppm_sequence<float>(tmp.file("mix")), DataError);
    std::filesystem::create_directories(tmp.file("empty"));
    EXPECT_THROW(ingest_ppm_sequence<float>(tmp.file("empty")), DataError);
    EXPECT_THROW(ingest_ppm_sequence<float>(tmp.file("nodir")), DataError);
}

TEST(Manifest, SaveLoadRoundTrip) {
    TempDir tmp;
    Manifest m;
    m.dir = tmp.file("");
    m.labels = {"calm", "alert"};
    m.entries = {{"a.efv", 0}, {"sub/b.efv", 1}, {"c.efv", 0}};
    save_manifest(tmp.file("m.tsv"), m);
    Manifest back = load_manifest(tmp.file("m.tsv"));
    EXPECT_EQ(back.labels, m.labels);
    ASSERT_EQ(back.entries.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back.entries[i].path, m.entries[i].path);
        EXPECT_EQ(back.entries[i].label, m.entries[i].label);
    }
    EXPECT_EQ(back.classes(), 2u);
    // resolve() joins against the manifest's directory.
    EXPECT_EQ(back.resolve(back.entries[1]),
              (std::filesystem::path(tmp.file("m.tsv")).parent_path() / "sub/b.efv").string());
}

TEST(Manifest, DerivesLabelsFromRecordsWithoutHeaders) {
    TempDir tmp;
    {
        std::ofstream os(tmp.file("m.tsv"));
        os << "x.efv\t1\thigh\n";
        os << "y.efv\t0\tlow\n";
    }
    Manifest m = load_manifest(tmp.file("m.tsv"));
    EXPECT_EQ(m.labels, (std::vector<std::string>{"low", "high"}));
}

TEST(Manifest, RejectsMalformedInputs) {
    TempDir tmp;
    auto write_and_load = [&tmp](const std::string& text) {
        std::ofstream(tmp.file("m.tsv")) << text;
        return load_manifest(tmp.file("m.tsv"));
    };
    // Missing tabs.
    EXPECT_THROW(write_and_load("x.efv 0 low\n"), DataError);
    // One id mapped to two names.
    EXPECT_THROW(write_and_load("x.efv\t0\tlow\ny.efv\t0\thigh\n"), DataError);
    // Sparse ids (no id 0 anywhere).
    EXPECT_THROW(write_and_load("#label 1 high\nx.efv\t1\thigh\n"), DataError);
    // Duplicate label names.
    EXPECT_THROW(write_and_load("#label 0 same\n#label 1 same\nx.efv\t0\tsame\n"), DataError);
    // Entry id beyond the header map.
    EXPECT_THROW(write_and_load("#label 0 low\n#label 1 high\nx.efv\t2\twhat\n"), DataError);
    EXPECT_THROW(load_manifest(tmp.file("absent.tsv")), DataError);
}

TEST(Synth, DeterministicBalancedAndReadable) {
    TempDir tmp;
    ClipGeometry geom{4, 8, 8, 3};
    const std::string p1 = synth_dataset(3, 2, geom, 77, tmp.file("a"));
    const std::string p2 = synth_dataset(3, 2, geom, 77, tmp.file("b"));
    Manifest m = load_manifest(p1);
    EXPECT_EQ(m.classes(), 2u);
    ASSERT_EQ(m.entries.size(), 6u);
    std::vector<std::size_t> per_class(2, 0);
    for (const ManifestEntry& e : m.entries) {
        ++per_class[e.label];
        Tensor<float> clip = read_clip<float>(m.resolve(e));
        EXPECT_EQ(clip.shape(), geom.shape());
        for (std::size_t i = 0; i < clip.numel(); ++i) {
            ASSERT_GE(clip[i], 0.0f);
            ASSERT_LE(clip[i], 255.0f);
        }
    }
    EXPECT_EQ(per_class, (std::vector<std::size_t>{3, 3}));
    // Same seed, different directory: identical bytes file by file.
    Manifest m2 = load_manifest(p2);
    for (std::size_t i = 0; i < m.entries.size(); ++i)
        EXPECT_EQ(slurp(m.resolve(m.entries[i])), slurp(m2.resolve(m2.entries[i])));
    // Different seed changes the pixels.
    const std::string p3 = synth_dataset(3, 2, geom, 78, tmp.file("c"));
    Manifest m3 = load_manifest(p3);
    EXPECT_NE(slurp(m.resolve(m.entries[0])), slurp(m3.resolve(m3.entries[0])));
}

TEST(Synth, ValidatesArguments) {
    TempDir tmp;
    EXPECT_THROW(synth_dataset(0, 2, {4, 8, 8, 3}, 1, tmp.file("x")), ConfigError);
    EXPECT_THROW(synth_dataset(2, 1, {4, 8, 8, 3}, 1, tmp.file("x")), ConfigError);
    EXPECT_THROW(synth_dataset(2, 2, {4, 8, 8, 1}, 1, tmp.file("x")), ConfigError);
}

TEST(Split, PartitionsEveryClassWithCeilTrainShare) {
    Manifest m;
    m.labels = {"a", "b"};
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t k = 0; k < 5; ++k)
            m.entries.push_back({"c" + std::to_string(c) + "_" + std::to_string(k), c});
    auto [train, test] = stratified_split(m, 9, 80);
    // ceil(5 * 0.8) = 4 per class.
    EXPECT_EQ(train.entries.size(), 8u);
    EXPECT_EQ(test.entries.size(), 2u);
    std::set<std::string> seen;
    for (const ManifestEntry& e : train.entries) EXPECT_TRUE(seen.insert(e.path).second);
    for (const ManifestEntry& e : test.entries) EXPECT_TRUE(seen.insert(e.path).second);
    EXPECT_EQ(seen.size(), 10u);  // disjoint and exhaustive
    std::vector<std::size_t> train_per_class(2, 0), test_per_class(2, 0);
    for (const ManifestEntry& e : train.entries) ++train_per_class[e.label];
    for (const ManifestEntry& e : test.entries) ++test_per_class[e.label];
    EXPECT_EQ(train_per_class, (std::vector<std::size_t>{4, 4}));
    EXPECT_EQ(test_per_class, (std::vector<std::size_t>{1, 1}));
    EXPECT_EQ(train.labels, m.labels);
}

TEST(Split, IntegerArithmeticAvoidsFloatBoundaries) {
    // 5 * 0.80 in binary floating point is 4.000000000000000888...; the
    // integer form (5*80+99)/100 must still yield exactly 4, and a 50 percent
    // split of 3 samples rounds up to 2.
    Manifest m;
    m.labels = {"only", "other"};
    for (std::size_t k = 0; k < 3; ++k) m.entries.push_back({"a" + std::to_string(k), 0});
    for (std::size_t k = 0; k < 3; ++k) m.entries.push_back({"b" + std::to_string(k), 1});
    auto [train, test] = stratified_split(m, 1, 50);
    EXPECT_EQ(train.entries.size(), 4u);
    EXPECT_EQ(test.entries.size(), 2u);
}

TEST(Split, DeterministicAndValidated) {
    Manifest m;
    m.labels = {"a", "b"};
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t k = 0; k < 4; ++k)
            m.entries.push_back({"c" + std::to_string(c) + "_" + std::to_string(k), c});
    auto [t1, e1] = stratified_split(m, 33, 75);
    auto [t2, e2] = stratified_split(m, 33, 75);
    ASSERT_EQ(t1.entries.size(), t2.entries.size());
    for (std::size_t i = 0; i < t1.entries.size(); ++i)
        EXPECT_EQ(t1.entries[i].path, t2.entries[i].path);

    EXPECT_THROW(stratified_split(m, 1, 0), ConfigError);
    EXPECT_THROW(stratified_split(m, 1, 100), ConfigError);
    Manifest thin;
    thin.labels = {"a", "b"};
    thin.entries = {{"x", 0}, {"y", 0}, {"z", 1}};  // class b has one sample
    EXPECT_THROW(stratified_split(thin, 1, 80), DataError);
}
