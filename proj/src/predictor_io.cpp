#include "smcpose/predictor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "json.hpp"
#include "smcpose/error.hpp"

namespace smcpose {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'M', 'C', 'P', 'R', 'E', 'D', '\0'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError(std::string("model file truncated reading ") + what);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string get_bytes(std::istream& in, std::uint32_t n, const char* what) {
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), n)) {
    throw FormatError(std::string("model file truncated reading ") + what);
  }
  return s;
}

}  // namespace

void save_model(const PredictorModel& model, std::ostream& out) {
  const PredictorConfig& c = model.config();
  const nlohmann::json header{{"history_len", c.history_len},
                              {"hidden", c.hidden},
                              {"fc_hidden", c.fc_hidden},
                              {"input_features", kInputFeatures},
                              {"outputs", kOutputs},
                              {"dropout_rate", c.dropout_rate},
                              {"leak_slope", c.leak_slope},
                              {"sigma_floor", c.sigma_floor},
                              {"reference_sigma", c.reference_sigma},
                              {"dtype", "float32-le"}};
  const std::string text = header.dump();
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kModelFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u32(out, static_cast<std::uint32_t>(model.tensors().size()));
  for (const auto& t : model.tensors()) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw Error("save_model: write failed");
}

void save_model(const PredictorModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  save_model(model, out);
}

PredictorModel load_model(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw FormatError("not a predictor model file (bad magic)");
  }
  const std::uint32_t version = get_u32(in, "version");
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported model version " + std::to_string(version));
  }
  const std::uint32_t header_len = get_u32(in, "header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(get_bytes(in, header_len, "header"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model header: ") + e.what());
  }

  PredictorConfig c;
  try {
    if (header.at("input_features").get<int>() != kInputFeatures ||
        header.at("outputs").get<int>() != kOutputs) {
      throw FormatError("model header: unsupported input/output width");
    }
    if (header.at("dtype").get<std::string>() != "float32-le") {
      throw FormatError("model header: unsupported dtype");
    }
    c.history_len = header.at("history_len").get<int>();
    c.hidden = header.at("hidden").get<int>();
    c.fc_hidden = header.at("fc_hidden").get<int>();
    c.dropout_rate = header.at("dropout_rate").get<double>();
    c.leak_slope = header.at("leak_slope").get<double>();
    c.sigma_floor = header.at("sigma_floor").get<double>();
    c.reference_sigma = header.value("reference_sigma", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model header: ") + e.what());
  }

  PredictorModel model(c);
  const std::uint32_t count = get_u32(in, "tensor count");
  if (count != model.tensors().size()) {
    throw FormatError("model file has " + std::to_string(count) + " tensors, expected " +
                      std::to_string(model.tensors().size()));
  }
  for (auto& t : model.tensors()) {
    const std::string name = get_bytes(in, get_u32(in, "tensor name length"), "tensor name");
    if (name != t.name) throw FormatError("model tensor '" + name + "', expected '" + t.name + "'");
    const std::uint32_t rank = get_u32(in, "tensor rank");
    std::vector<int> shape(rank);
    for (int& d : shape) d = static_cast<int>(get_u32(in, "tensor shape"));
    if (shape != t.shape) throw FormatError("model tensor '" + name + "' has unexpected shape");
    for (float& v : t.data) v = std::bit_cast<float>(get_u32(in, "tensor data"));
  }
  if (!model.all_finite()) throw FormatError("model file contains non-finite parameters");
  return model;
}

PredictorModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return load_model(in);
}

}  // namespace smcpose
