#include "abmt/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <vector>

#include <json.hpp>

namespace abmt {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'A', 'B', 'M', 'T', 'C', 'K', 'P', '1'};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void collect(const std::string& prefix, const std::vector<ResidualBlockParams>& blocks,
             std::vector<NamedTensor>& out) {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string b = prefix + "." + std::to_string(i);
    out.push_back({b + ".w1", blocks[i].w1});
    out.push_back({b + ".b1", blocks[i].b1});
    out.push_back({b + ".w2", blocks[i].w2});
    out.push_back({b + ".b2", blocks[i].b2});
  }
}

std::vector<NamedTensor> manifest(const EncoderState& st) {
  std::vector<NamedTensor> out;
  out.push_back({"stem.w", st.stem_w});
  out.push_back({"stem.b", st.stem_b});
  collect("trunk", st.trunk, out);
  out.push_back({"branch_a.entry.w", st.branch_a.entry_w});
  out.push_back({"branch_a.entry.b", st.branch_a.entry_b});
  collect("branch_a", st.branch_a.blocks, out);
  out.push_back({"branch_m.entry.w", st.branch_m.entry_w});
  out.push_back({"branch_m.entry.b", st.branch_m.entry_b});
  collect("branch_m", st.branch_m.blocks, out);
  out.push_back({"classifier_a", st.classifier_a});
  out.push_back({"classifier_m", st.classifier_m});
  return out;
}

json config_json(const EncoderConfig& c) {
  json j;
  j["d_in"] = c.d_in;
  j["d_hidden"] = c.d_hidden;
  j["d_feat"] = c.d_feat;
  j["trunk_blocks"] = c.trunk_blocks;
  j["branch_a_blocks"] = c.branch_a_blocks;
  j["branch_m_blocks"] = c.branch_m_blocks;
  j["num_classes"] = c.num_classes;
  j["asymmetric"] = c.asymmetric;
  j["classifier_temperature"] = c.classifier_temperature;
  return j;
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.d_in = j.at("d_in").get<int>();
  c.d_hidden = j.at("d_hidden").get<int>();
  c.d_feat = j.at("d_feat").get<int>();
  c.trunk_blocks = j.at("trunk_blocks").get<int>();
  c.branch_a_blocks = j.at("branch_a_blocks").get<int>();
  c.branch_m_blocks = j.at("branch_m_blocks").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.asymmetric = j.at("asymmetric").get<bool>();
  c.classifier_temperature = j.at("classifier_temperature").get<double>();
  return c;
}

}  // namespace

void save_encoder(const EncoderState& state, const std::string& path) {
  const auto entries = manifest(state);
  json header;
  header["config"] = config_json(state.config);
  header["rng_seed"] = state.rng_seed;
  json arrays = json::array();
  for (const auto& e : entries) {
    json a;
    a["name"] = e.name;
    a["shape"] = e.tensor.shape();
    arrays.push_back(a);
  }
  header["arrays"] = arrays;
  const std::string head = header.dump();

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open for writing: " + path);
  std::fwrite(kMagic, 1, sizeof(kMagic), f);
  const std::uint64_t len = head.size();
  std::fwrite(&len, sizeof(len), 1, f);
  std::fwrite(head.data(), 1, head.size(), f);
  for (const auto& e : entries) {
    const auto d = e.tensor.data();
    if (!d.empty()) std::fwrite(d.data(), sizeof(double), d.size(), f);
  }
  if (std::fclose(f) != 0) throw IoError("write failed: " + path);
}

EncoderState load_encoder(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  if (std::fread(magic, 1, sizeof(magic), f) != sizeof(magic) ||
      std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    std::fclose(f);
    throw IoError("bad checkpoint magic: " + path);
  }
  std::uint64_t len = 0;
  if (std::fread(&len, sizeof(len), 1, f) != 1) {
    std::fclose(f);
    throw IoError("truncated checkpoint header: " + path);
  }
  std::string head(len, '\0');
  if (std::fread(head.data(), 1, len, f) != len) {
    std::fclose(f);
    throw IoError("truncated checkpoint header: " + path);
  }
  json header;
  try {
    header = json::parse(head);
  } catch (const std::exception& e) {
    std::fclose(f);
    throw IoError(std::string("bad checkpoint header json: ") + e.what());
  }

  EncoderState st = build_encoder(config_from_json(header.at("config")),
                                  header.at("rng_seed").get<std::uint64_t>());
  auto entries = manifest(st);
  const json& arrays = header.at("arrays");
  if (arrays.size() != entries.size()) {
    std::fclose(f);
    throw IoError("checkpoint array manifest does not match the config");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const json& a = arrays[i];
    if (a.at("name").get<std::string>() != entries[i].name ||
        a.at("shape").get<std::vector<int>>() != entries[i].tensor.shape()) {
      std::fclose(f);
      throw IoError("checkpoint array mismatch at " + entries[i].name);
    }
    auto dst = entries[i].tensor.data_mut();
    if (!dst.empty() && std::fread(dst.data(), sizeof(double), dst.size(), f) != dst.size()) {
      std::fclose(f);
      throw IoError("truncated checkpoint data at " + entries[i].name);
    }
  }
  std::fclose(f);
  return st;
}

}  // namespace abmt
