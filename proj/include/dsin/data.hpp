#ifndef DSIN_DATA_HPP
#define DSIN_DATA_HPP

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dsin/errors.hpp"
#include "dsin/rng.hpp"
#include "dsin/serialize.hpp"
#include "dsin/tensor.hpp"

namespace dsin {

struct StreamGeometry {
  int h = 0, w = 0, c = 0;
  bool operator==(const StreamGeometry&) const = default;
  std::string str() const {
    return std::to_string(h) + "x" + std::to_string(w) + "x" +
           std::to_string(c);
  }
};

// One observation: P image streams plus N binary labels.
struct Sample {
  std::string id;
  std::string subject;
  std::vector<Tensor> patches;  // one [h,w,c] tensor per stream
  std::vector<int> labels;      // N values in {0,1}
};

struct Dataset {
  int n_labels = 0;
  std::vector<StreamGeometry> streams;
  std::vector<Sample> samples;

  int n_streams() const { return static_cast<int>(streams.size()); }
  std::size_t size() const { return samples.size(); }
};

struct CropSpec {
  std::vector<std::pair<int, int>> anchors;  // (row, col) window centers
  int patch_size = 56;
  int face_size = 224;
};

// Axis-aligned windows of side patch_size centered at each anchor:
// center (r, c) maps to rows [r - s/2, r - s/2 + s). Values are copied.
inline std::vector<Tensor> crop_patches(const Tensor& face,
                                        const CropSpec& crop) {
  if (face.rank() != 3)
    throw shape_error("crop_patches expects a [H,W,C] face image, got " +
                      shape_str(face.shape()));
  const int H = face.shape()[0], W = face.shape()[1], C = face.shape()[2];
  const int s = crop.patch_size;
  const int half = s / 2;
  std::vector<Tensor> out;
  out.reserve(crop.anchors.size());
  for (auto [r, c] : crop.anchors) {
    const int r0 = r - half, c0 = c - half;
    if (r0 < 0 || c0 < 0 || r0 + s > H || c0 + s > W)
      throw value_error("crop window of side " + std::to_string(s) +
                        " at anchor (" + std::to_string(r) + "," +
                        std::to_string(c) + ") exceeds image " +
                        shape_str(face.shape()));
    Tensor patch = Tensor::zeros({s, s, C});
    auto& pv = patch.values();
    const auto& fv = face.values();
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        for (int ch = 0; ch < C; ++ch)
          pv[(static_cast<std::size_t>(y) * s + x) * C + ch] =
              fv[(static_cast<std::size_t>(r0 + y) * W + (c0 + x)) * C + ch];
    out.push_back(std::move(patch));
  }
  return out;
}

struct ClassStats {
  std::vector<double> rho;    // positive ratio per class
  std::vector<double> w_pos;  // weight applied to positive targets
};

// rho_j = positives_j / M. With balancing, w_pos_j = (1 - rho_j) / rho_j,
// the inverse-positive-ratio weighting; without, all weights are 1.
inline ClassStats compute_class_stats(const Dataset& ds, bool balancing) {
  if (ds.samples.empty())
    throw value_error("compute_class_stats on empty dataset");
  const int N = ds.n_labels;
  ClassStats st;
  st.rho.assign(N, 0.0);
  st.w_pos.assign(N, 1.0);
  for (const Sample& s : ds.samples)
    for (int j = 0; j < N; ++j) st.rho[j] += s.labels[j];
  const double M = static_cast<double>(ds.samples.size());
  for (int j = 0; j < N; ++j) st.rho[j] /= M;
  if (balancing) {
    for (int j = 0; j < N; ++j) {
      if (st.rho[j] == 0.0)
        throw value_error(
            "class " + std::to_string(j) +
            " has no positive samples; balancing weight undefined - drop or "
            "merge the class");
      st.w_pos[j] = (1.0 - st.rho[j]) / st.rho[j];
    }
  }
  return st;
}

// Subject-exclusive folds: every subject's samples land in exactly one fold;
// per-fold subject counts differ by at most one. Returns sample indices.
inline std::vector<std::vector<std::size_t>> make_folds(const Dataset& ds,
                                                        int k,
                                                        std::uint64_t seed) {
  if (k < 1) throw value_error("fold count must be >= 1");
  std::vector<std::string> subjects;
  for (const Sample& s : ds.samples)
    if (std::find(subjects.begin(), subjects.end(), s.subject) ==
        subjects.end())
      subjects.push_back(s.subject);
  if (static_cast<int>(subjects.size()) < k)
    throw value_error("cannot make " + std::to_string(k) + " folds from " +
                      std::to_string(subjects.size()) + " subjects");
  std::sort(subjects.begin(), subjects.end());
  RngStream rng = derive_stream(seed, {0x0F01D5});
  for (std::size_t i = subjects.size(); i > 1; --i)
    std::swap(subjects[i - 1], subjects[rng.uniform_int(static_cast<int>(i))]);

  std::map<std::string, int> fold_of;
  for (std::size_t i = 0; i < subjects.size(); ++i)
    fold_of[subjects[i]] = static_cast<int>(i % k);
  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    folds[fold_of[ds.samples[i].subject]].push_back(i);
  return folds;
}

inline Dataset subset(const Dataset& ds,
                      const std::vector<std::size_t>& indices) {
  Dataset out;
  out.n_labels = ds.n_labels;
  out.streams = ds.streams;
  out.samples.reserve(indices.size());
  for (std::size_t i : indices) out.samples.push_back(ds.samples[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Manifest: a directory holding index.tsv plus one binary tensor block per
// stream per sample. Index header carries schema version, N, P and the
// per-stream geometry; each record is
//   id <tab> subject <tab> labels(e.g. 010011) <tab> stream files...
// ---------------------------------------------------------------------------

inline constexpr int kManifestVersion = 1;

inline std::string labels_to_bits(const std::vector<int>& labels) {
  std::string s;
  for (int v : labels) s.push_back(v ? '1' : '0');
  return s;
}

inline void save_manifest(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream index(dir / "index.tsv", std::ios::binary);
  if (!index) throw io_error("cannot write manifest index in " + dir.string());
  index << "dsin-manifest\tversion=" << kManifestVersion
        << "\tN=" << ds.n_labels << "\tP=" << ds.n_streams() << "\tstreams=";
  for (int i = 0; i < ds.n_streams(); ++i)
    index << (i ? "," : "") << ds.streams[i].str();
  index << "\n";
  for (const Sample& s : ds.samples) {
    if (static_cast<int>(s.labels.size()) != ds.n_labels)
      throw value_error("sample " + s.id + " has " +
                        std::to_string(s.labels.size()) +
                        " labels, manifest declares " +
                        std::to_string(ds.n_labels));
    index << s.id << '\t' << s.subject << '\t' << labels_to_bits(s.labels);
    for (int p = 0; p < ds.n_streams(); ++p) {
      const std::string fname = s.id + "_s" + std::to_string(p) + ".bin";
      index << '\t' << fname;
      std::ofstream f(dir / fname, std::ios::binary);
      if (!f) throw io_error("cannot write patch file " + fname);
      io::write_tensor_block(f, s.patches[p].shape(), s.patches[p].values());
    }
    index << '\n';
  }
}

inline StreamGeometry parse_geometry(const std::string& s) {
  StreamGeometry g;
  char x1, x2;
  std::istringstream is(s);
  if (!(is >> g.h >> x1 >> g.w >> x2 >> g.c) || x1 != 'x' || x2 != 'x')
    throw io_error("bad stream geometry '" + s + "' in manifest header");
  return g;
}

inline Dataset load_manifest(const std::filesystem::path& dir) {
  std::ifstream index(dir / "index.tsv", std::ios::binary);
  if (!index)
    throw io_error("cannot open manifest index " +
                   (dir / "index.tsv").string());
  std::string header;
  std::getline(index, header);
  std::istringstream hs(header);
  std::string magic, field;
  std::getline(hs, magic, '\t');
  if (magic != "dsin-manifest")
    throw io_error("not a manifest index: " + (dir / "index.tsv").string());
  Dataset ds;
  int version = -1, P = -1;
  while (std::getline(hs, field, '\t')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw io_error("bad header field " + field);
    const std::string key = field.substr(0, eq), val = field.substr(eq + 1);
    if (key == "version") version = std::stoi(val);
    else if (key == "N") ds.n_labels = std::stoi(val);
    else if (key == "P") P = std::stoi(val);
    else if (key == "streams") {
      std::istringstream gs(val);
      std::string one;
      while (std::getline(gs, one, ',')) ds.streams.push_back(parse_geometry(one));
    } else {
      throw io_error("unknown manifest header field '" + key + "'");
    }
  }
  if (version != kManifestVersion)
    throw io_error("unsupported manifest schema version " +
                   std::to_string(version));
  if (ds.n_labels <= 0 || P <= 0 || static_cast<int>(ds.streams.size()) != P)
    throw io_error("inconsistent manifest header: " + header);

  std::string line;
  std::size_t row = 1;
  while (std::getline(index, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ls(line);
    Sample s;
    std::string bits;
    std::getline(ls, s.id, '\t');
    std::getline(ls, s.subject, '\t');
    std::getline(ls, bits, '\t');
    if (static_cast<int>(bits.size()) != ds.n_labels)
      throw io_error("row " + std::to_string(row) + " (sample " + s.id +
                     "): " + std::to_string(bits.size()) +
                     " labels, manifest declares " +
                     std::to_string(ds.n_labels));
    for (char b : bits) {
      if (b != '0' && b != '1')
        throw io_error("row " + std::to_string(row) + ": bad label char");
      s.labels.push_back(b == '1');
    }
    for (int p = 0; p < P; ++p) {
      std::string fname;
      if (!std::getline(ls, fname, '\t'))
        throw io_error("row " + std::to_string(row) + ": missing stream file " +
                       std::to_string(p));
      std::ifstream f(dir / fname, std::ios::binary);
      if (!f)
        throw io_error("row " + std::to_string(row) + ": missing patch file " +
                       fname);
      std::vector<int> shape;
      std::vector<double> vals;
      io::read_tensor_block(f, shape, vals);
      const StreamGeometry want = ds.streams[p];
      if (shape != std::vector<int>{want.h, want.w, want.c})
        throw io_error("row " + std::to_string(row) + ": patch " + fname +
                       " has shape " + shape_str(shape) +
                       ", manifest declares " + want.str());
      s.patches.push_back(Tensor::from(shape, std::move(vals)));
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace dsin

#endif  // DSIN_DATA_HPP
