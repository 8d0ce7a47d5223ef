#include "tndvga/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>

#include "tndvga/errors.hpp"

namespace tndvga {
namespace {

constexpr std::string_view kAlphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

nlohmann::json moments_to_json(const std::map<std::string, Tensor, std::less<>>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, t] : m) j[name] = tensor_to_json(t);
  return j;
}

std::map<std::string, Tensor, std::less<>> moments_from_json(const nlohmann::json& j) {
  std::map<std::string, Tensor, std::less<>> m;
  for (const auto& [name, t] : j.items()) m.emplace(name, tensor_from_json(t));
  return m;
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (std::uint32_t{bytes[i]} << 16) | (std::uint32_t{bytes[i + 1]} << 8) | bytes[i + 2];
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(kAlphabet[(v >> 6) & 63]);
    out.push_back(kAlphabet[v & 63]);
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t v = std::uint32_t{bytes[i]} << 16;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t v = (std::uint32_t{bytes[i]} << 16) | (std::uint32_t{bytes[i + 1]} << 8);
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(kAlphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw InputError("base64 payload length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::array<int, 4> q{};
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + static_cast<std::size_t>(k)];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) throw InputError("misplaced base64 padding");
        q[static_cast<std::size_t>(k)] = 0;
        ++pad;
      } else {
        if (pad > 0) throw InputError("misplaced base64 padding");
        q[static_cast<std::size_t>(k)] = decode_char(c);
        if (q[static_cast<std::size_t>(k)] < 0) throw InputError("invalid base64 character");
      }
    }
    const std::uint32_t v = (static_cast<std::uint32_t>(q[0]) << 18) | (static_cast<std::uint32_t>(q[1]) << 12) |
                            (static_cast<std::uint32_t>(q[2]) << 6) | static_cast<std::uint32_t>(q[3]);
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v & 0xff));
  }
  return out;
}

nlohmann::json tensor_to_json(const Tensor& t) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(t.size() * 8);
  for (double v : t.values()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return {{"shape", t.shape()}, {"data", base64_encode(bytes)}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("shape") || !j.contains("data")) {
    throw InputError("tensor entry must carry 'shape' and 'data'");
  }
  const auto shape = j.at("shape").get<Shape>();
  const auto bytes = base64_decode(j.at("data").get<std::string>());
  if (bytes.size() != shape_size(shape) * 8) throw InputError("tensor payload does not match its shape");
  std::vector<double> values(bytes.size() / 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[i * 8 + static_cast<std::size_t>(b)]} << (8 * b);
    values[i] = std::bit_cast<double>(bits);
  }
  return Tensor(shape, std::move(values));
}

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, p] : ckpt.params) params[name] = tensor_to_json(p.value);
  nlohmann::json opt = nullptr;
  if (ckpt.optimizer) {
    const auto& s = *ckpt.optimizer;
    opt = {{"step", s.step},
           {"learning_rate", s.options.learning_rate},
           {"beta1", s.options.beta1},
           {"beta2", s.options.beta2},
           {"epsilon", s.options.epsilon},
           {"weight_decay", s.options.weight_decay},
           {"first_moment", moments_to_json(s.first_moment)},
           {"second_moment", moments_to_json(s.second_moment)}};
  }
  return {{"params", params}, {"optimizer", opt}, {"meta", ckpt.meta}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint ckpt;
  try {
    for (const auto& [name, t] : j.at("params").items()) ckpt.params.add(name, tensor_from_json(t));
    const auto& opt = j.at("optimizer");
    if (!opt.is_null()) {
      AdamState s;
      s.step = opt.at("step").get<std::uint64_t>();
      s.options.learning_rate = opt.at("learning_rate").get<double>();
      s.options.beta1 = opt.at("beta1").get<double>();
      s.options.beta2 = opt.at("beta2").get<double>();
      s.options.epsilon = opt.at("epsilon").get<double>();
      s.options.weight_decay = opt.at("weight_decay").get<double>();
      s.first_moment = moments_from_json(opt.at("first_moment"));
      s.second_moment = moments_from_json(opt.at("second_moment"));
      ckpt.optimizer = std::move(s);
    }
    if (j.contains("meta")) ckpt.meta = j.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed checkpoint: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(ckpt).dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace tndvga
