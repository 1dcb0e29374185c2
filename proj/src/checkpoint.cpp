#include "xprompt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "xprompt/error.hpp"
#include "xprompt/random.hpp"

namespace xprompt {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'X', 'P', 'R', 'M'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw ValidationError("truncated parameter blob");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string encode_tensors(ModelParams<float>& params) {
  std::string out(kMagic, 4);
  auto tensors = params.tensors();
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    const auto& m = *t.value;
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) put_u32(out, std::bit_cast<std::uint32_t>(m(r, c)));
    }
  }
  return out;
}

void decode_tensors(const std::string& blob, ModelParams<float>& params) {
  if (blob.size() < 4 || std::memcmp(blob.data(), kMagic, 4) != 0) {
    throw ValidationError("parameter blob has a bad magic number");
  }
  std::size_t pos = 4;
  const auto count = get_u32(blob, pos);
  std::map<std::string, Mat<float>> loaded;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_u32(blob, pos);
    if (pos + len > blob.size()) throw ValidationError("truncated parameter blob");
    std::string name = blob.substr(pos, len);
    pos += len;
    const auto rows = get_u32(blob, pos);
    const auto cols = get_u32(blob, pos);
    Mat<float> m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = std::bit_cast<float>(get_u32(blob, pos));
    }
    loaded.emplace(std::move(name), std::move(m));
  }
  if (pos != blob.size()) throw ValidationError("trailing bytes in parameter blob");
  for (auto& t : params.tensors()) {
    auto it = loaded.find(t.name);
    if (it == loaded.end()) throw ValidationError("checkpoint is missing tensor " + t.name);
    *t.value = std::move(it->second);
  }
}

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  auto params = model.params;
  const auto tmp = fs::path(dir.string() + ".tmp");
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  json tensors = json::array();
  for (const auto& t : params.tensors()) {
    tensors.push_back({{"name", t.name}, {"shape", {t.value->rows(), t.value->cols()}}});
  }
  json manifest{{"format", "xprompt-checkpoint"},
                {"version", 1},
                {"encoder", to_json(model.encoder)},
                {"train_config", to_json(model.config)},
                {"num_layers", params.layers.size()},
                {"m", model.m},
                {"tensors", tensors}};
  json provenance = json::array();
  for (const auto& p : model.provenance) {
    provenance.push_back({{"token", p.token},
                          {"mi_score", p.mi_score},
                          {"mean_aspect_distance", p.mean_aspect_distance},
                          {"domain_counts", p.domain_counts}});
  }
  json bank{{"m", model.m},
            {"d", params.prompts.cols()},
            {"rows", params.prompts.rows()},
            {"provenance", provenance}};

  write_file_atomic(tmp / "manifest.json", manifest.dump(2) + "\n");
  write_file_atomic(tmp / "params.bin", encode_tensors(params));
  write_file_atomic(tmp / "prompt_bank.json", bank.dump(2) + "\n");
  model.pos_vocab.save(tmp / "pos_vocab.txt");
  model.vocab.save(tmp / "subword_vocab.txt");

  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

TrainedModel load_checkpoint(const std::filesystem::path& dir) {
  json manifest, bank;
  try {
    manifest = json::parse(read_file(dir / "manifest.json"));
    bank = json::parse(read_file(dir / "prompt_bank.json"));
  } catch (const json::exception& e) {
    throw ValidationError(dir.string() + ": bad checkpoint JSON: " + e.what());
  }
  if (manifest.value("format", "") != "xprompt-checkpoint") {
    throw ValidationError(dir.string() + " is not a checkpoint directory");
  }
  TrainedModel model;
  model.encoder = encoder_config_from_json(manifest.at("encoder"));
  model.config = train_config_from_json(manifest.at("train_config"));
  model.m = manifest.at("m").get<int>();
  model.vocab = SubwordVocab::load(dir / "subword_vocab.txt");
  model.pos_vocab = PosVocabulary::load(dir / "pos_vocab.txt");
  model.params.layers.resize(manifest.at("num_layers").get<std::size_t>());
  decode_tensors(read_file(dir / "params.bin"), model.params);
  for (const auto& p : bank.at("provenance")) {
    PromptCandidate c;
    c.token = p.at("token").get<std::string>();
    c.mi_score = p.at("mi_score").get<double>();
    c.mean_aspect_distance = p.at("mean_aspect_distance").get<double>();
    c.domain_counts = p.at("domain_counts").get<std::map<std::string, int>>();
    model.provenance.push_back(std::move(c));
  }
  const auto d = model.encoder.hidden_width;
  if (model.params.width() != d || model.params.prompts.cols() != d ||
      model.params.aspect.weight.rows() != 3 * d) {
    throw ValidationError(dir.string() + ": tensor shapes disagree with the encoder config");
  }
  return model;
}

std::string fingerprint(const TrainedModel& model) {
  auto params = model.params;
  std::string bytes = to_json(model.config).dump() + to_json(model.encoder).dump() + encode_tensors(params);
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << hash_string(bytes);
  return out.str();
}

}  // namespace xprompt
