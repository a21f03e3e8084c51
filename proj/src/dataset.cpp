#include "abmt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace abmt {

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "query") return Split::query;
  if (name == "gallery") return Split::gallery;
  throw IoError("unknown split tag: " + name);
}

std::vector<int> Dataset::indices(Split split) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(samples.size()); ++i)
    if (samples[static_cast<std::size_t>(i)].split == split) out.push_back(i);
  return out;
}

Tensor Dataset::batch_tensor(std::span<const int> idx) const {
  const int n = static_cast<int>(idx.size());
  Tensor out = Tensor::zeros({n, P, d_in});
  double* ov = out.data_mut().data();
  const std::size_t stride = static_cast<std::size_t>(P) * d_in;
  for (int i = 0; i < n; ++i) {
    const Sample& s = samples.at(static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]));
    std::copy(s.parts.begin(), s.parts.end(), ov + static_cast<std::size_t>(i) * stride);
  }
  return out;
}

Tensor Dataset::split_tensor(Split split) const {
  const std::vector<int> idx = indices(split);
  return batch_tensor(idx);
}

std::vector<int> Dataset::identities(std::span<const int> idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(samples.at(static_cast<std::size_t>(i)).identity);
  return out;
}

std::vector<int> Dataset::cameras(std::span<const int> idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(samples.at(static_cast<std::size_t>(i)).camera);
  return out;
}

void Dataset::validate() const {
  const std::size_t expect = static_cast<std::size_t>(P) * d_in;
  for (const Sample& s : samples) {
    if (s.parts.size() != expect) throw ContractError("dataset: sample part matrix size mismatch");
  }
  // query identities must appear in the gallery
  std::vector<int> gal_ids;
  for (const Sample& s : samples)
    if (s.split == Split::gallery) gal_ids.push_back(s.identity);
  std::sort(gal_ids.begin(), gal_ids.end());
  for (const Sample& s : samples) {
    if (s.split == Split::query &&
        !std::binary_search(gal_ids.begin(), gal_ids.end(), s.identity))
      throw ContractError("dataset: query identity missing from gallery");
  }
}

namespace {

std::vector<double> random_vec(Rng& rng, int n, double scl) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = scl * rng.normal();
  return v;
}

struct AffineMap {
  std::vector<double> m;  // d x d
  std::vector<double> t;  // d
  int d = 0;

  void apply(double* vec) const {
    std::vector<double> out(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < d; ++i) {
      double acc = t[static_cast<std::size_t>(i)];
      for (int j = 0; j < d; ++j)
        acc += m[static_cast<std::size_t>(i) * d + j] * vec[j];
      out[static_cast<std::size_t>(i)] = acc;
    }
    std::copy(out.begin(), out.end(), vec);
  }
};

// identity + shift * R with R ~ N(0, 1/d), plus a shift-scaled translation
AffineMap make_domain_map(Rng& rng, int d, double shift) {
  AffineMap a;
  a.d = d;
  a.m.assign(static_cast<std::size_t>(d) * d, 0.0);
  const double scl = shift / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      a.m[static_cast<std::size_t>(i) * d + j] = (i == j ? 1.0 : 0.0) + scl * rng.normal();
  a.t = random_vec(rng, d, 0.5 * shift);
  return a;
}

void generate_domain(Dataset& ds, const SynthConfig& cfg, Rng& rng, int id_base,
                     const std::vector<std::vector<double>>& cam_bias, const AffineMap* map,
                     bool make_splits) {
  ds.P = cfg.P;
  ds.d_in = cfg.d_in;
  ds.n_cams = cfg.n_cams;

  const int train_count = cfg.imgs_per_id / 2;
  const int rest = cfg.imgs_per_id - train_count;
  const int query_count = std::max(1, rest / 4);

  for (int id = 0; id < cfg.n_ids; ++id) {
    const std::vector<double> base = random_vec(rng, cfg.d_in, cfg.id_scale);
    std::vector<std::vector<double>> part_offset;
    part_offset.reserve(static_cast<std::size_t>(cfg.P));
    for (int p = 0; p < cfg.P; ++p) part_offset.push_back(random_vec(rng, cfg.d_in, cfg.part_scale));

    for (int img = 0; img < cfg.imgs_per_id; ++img) {
      Sample s;
      s.identity = id_base + id;
      s.camera = img % cfg.n_cams;
      if (make_splits) {
        if (img < train_count)
          s.split = Split::train;
        else if (img < train_count + query_count)
          s.split = Split::query;
        else
          s.split = Split::gallery;
      } else {
        s.split = Split::train;
      }
      s.parts.resize(static_cast<std::size_t>(cfg.P) * cfg.d_in);
      for (int p = 0; p < cfg.P; ++p) {
        double* part = s.parts.data() + static_cast<std::size_t>(p) * cfg.d_in;
        for (int j = 0; j < cfg.d_in; ++j) {
          part[j] = base[static_cast<std::size_t>(j)] +
                    part_offset[static_cast<std::size_t>(p)][static_cast<std::size_t>(j)] +
                    cam_bias[static_cast<std::size_t>(s.camera)][static_cast<std::size_t>(j)] +
                    cfg.noise * rng.normal();
        }
        if (map) map->apply(part);
      }
      ds.samples.push_back(std::move(s));
    }
  }
}

}  // namespace

std::pair<Dataset, Dataset> synth_dataset(const SynthConfig& cfg) {
  if (cfg.n_ids < 4 || cfg.imgs_per_id < 4 || cfg.n_cams < 2)
    throw ParameterError("synth_dataset: need n_ids >= 4, imgs_per_id >= 4, n_cams >= 2");
  if (cfg.P < 1 || cfg.d_in < 1) throw ParameterError("synth_dataset: P and d_in must be >= 1");

  // one camera rig for both sites: biases are shared, but the target's domain
  // map distorts them along with everything else
  Rng cam_rng(derive_seed(cfg.seed, 0x43414dULL));
  std::vector<std::vector<double>> cam_bias;
  cam_bias.reserve(static_cast<std::size_t>(cfg.n_cams));
  for (int c = 0; c < cfg.n_cams; ++c) cam_bias.push_back(random_vec(cam_rng, cfg.d_in, cfg.cam_scale));

  Dataset source;
  source.domain = Domain::source;
  Rng src_rng(derive_seed(cfg.seed, 0x535243ULL));
  generate_domain(source, cfg, src_rng, 0, cam_bias, nullptr, /*make_splits=*/false);

  Dataset target;
  target.domain = Domain::target;
  Rng tgt_rng(derive_seed(cfg.seed, 0x544754ULL));
  const AffineMap map = make_domain_map(tgt_rng, cfg.d_in, cfg.domain_shift);
  generate_domain(target, cfg, tgt_rng, cfg.n_ids, cam_bias, &map, /*make_splits=*/true);

  source.validate();
  target.validate();
  return {std::move(source), std::move(target)};
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open for writing: " + path);
  std::fprintf(f, "%zu %d %d %d\n", ds.samples.size(), ds.P, ds.d_in, ds.n_cams);
  for (const Sample& s : ds.samples) {
    std::fprintf(f, "%d %d %s", s.identity, s.camera, split_name(s.split));
    for (double v : s.parts) std::fprintf(f, " %.17g", v);
    std::fprintf(f, "\n");
  }
  std::fclose(f);
}

Dataset load_dataset(const std::string& path, Domain domain) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  Dataset ds;
  ds.domain = domain;
  std::size_t n = 0;
  if (!(in >> n >> ds.P >> ds.d_in >> ds.n_cams)) throw IoError("bad dataset header: " + path);
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    std::string tag;
    if (!(in >> s.identity >> s.camera >> tag)) throw IoError("truncated dataset record");
    s.split = split_from_name(tag);
    s.parts.resize(static_cast<std::size_t>(ds.P) * ds.d_in);
    for (double& v : s.parts)
      if (!(in >> v)) throw IoError("truncated dataset record values");
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

std::vector<int> sample_pk_batch(std::span<const int> labels, int p, int k_inst, Rng& rng) {
  if (p < 1 || k_inst < 1) throw ParameterError("sample_pk_batch: p and k_inst must be >= 1");
  std::map<int, std::vector<int>> members;  // ordered for determinism
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y >= 0) members[y].push_back(i);
  }
  if (members.size() < 2) throw BatchError("sample_pk_batch: fewer than 2 eligible labels");

  std::vector<int> eligible;
  eligible.reserve(members.size());
  for (const auto& [y, _] : members) eligible.push_back(y);

  // draw min(p, eligible) distinct labels without replacement
  const int take = std::min<int>(p, static_cast<int>(eligible.size()));
  std::vector<int> chosen;
  chosen.reserve(static_cast<std::size_t>(take));
  for (int t = 0; t < take; ++t) {
    const std::size_t j = static_cast<std::size_t>(t) + rng.index(eligible.size() - static_cast<std::size_t>(t));
    std::swap(eligible[static_cast<std::size_t>(t)], eligible[j]);
    chosen.push_back(eligible[static_cast<std::size_t>(t)]);
  }

  std::vector<int> batch;
  batch.reserve(static_cast<std::size_t>(take) * k_inst);
  for (int y : chosen) {
    const std::vector<int>& pool = members[y];
    if (static_cast<int>(pool.size()) >= k_inst) {
      // without replacement
      std::vector<int> tmp = pool;
      for (int t = 0; t < k_inst; ++t) {
        const std::size_t j = static_cast<std::size_t>(t) + rng.index(tmp.size() - static_cast<std::size_t>(t));
        std::swap(tmp[static_cast<std::size_t>(t)], tmp[j]);
        batch.push_back(tmp[static_cast<std::size_t>(t)]);
      }
    } else {
      for (int t = 0; t < k_inst; ++t) batch.push_back(pool[rng.index(pool.size())]);
    }
  }
  return batch;
}

Tensor part_erasing(const Tensor& batch, double prob, Rng& rng) {
  if (prob < 0.0 || prob > 1.0) throw ParameterError("part_erasing: prob must be in [0, 1]");
  if (batch.ndim() != 3) throw DimensionError("part_erasing: batch must be N x P x d_in");
  Tensor out = batch.clone();
  out.set_requires_grad(false);
  const int n = batch.dim(0), p = batch.dim(1), d = batch.dim(2);
  double* ov = out.data_mut().data();
  for (int i = 0; i < n; ++i) {
    if (rng.unit() >= prob) continue;
    const int q = static_cast<int>(rng.index(static_cast<std::uint64_t>(p)));
    double* part = ov + (static_cast<std::size_t>(i) * p + q) * d;
    std::fill_n(part, d, 0.0);
  }
  return out;
}

}  // namespace abmt
