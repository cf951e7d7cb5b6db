#include "msp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "msp/error.hpp"
#include "msp/text.hpp"

namespace msp {

namespace {

constexpr const char* kMagic = "MSPCKPT1";

struct BufferDesc {
  std::string name;
  Dtype dtype;
  std::vector<int64_t> shape;
  size_t offset = 0;
  size_t length = 0;
};

size_t elem_size(Dtype dt) { return dt == Dtype::f32 ? 4 : 8; }

void append_values(std::string& blob, const std::vector<double>& values, Dtype dt) {
  if (dt == Dtype::f32) {
    for (double v : values) {
      const float f = static_cast<float>(v);
      char bytes[4];
      std::memcpy(bytes, &f, 4);
      blob.append(bytes, 4);
    }
  } else {
    for (double v : values) {
      char bytes[8];
      std::memcpy(bytes, &v, 8);
      blob.append(bytes, 8);
    }
  }
}

std::vector<double> read_values(const std::string& blob, const BufferDesc& desc) {
  const size_t es = elem_size(desc.dtype);
  const size_t count = desc.length / es;
  std::vector<double> out(count);
  const char* p = blob.data() + desc.offset;
  for (size_t i = 0; i < count; ++i) {
    if (desc.dtype == Dtype::f32) {
      float f;
      std::memcpy(&f, p + i * 4, 4);
      out[i] = static_cast<double>(f);
    } else {
      double d;
      std::memcpy(&d, p + i * 8, 8);
      out[i] = d;
    }
  }
  return out;
}

Dtype parse_dtype(const std::string& s, const std::string& where) {
  if (s == "f64") return Dtype::f64;
  if (s == "f32") return Dtype::f32;
  fail(ErrorKind::incompatible_checkpoint, "unknown dtype '" + s + "' in " + where);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::vector<BufferDesc> descs;
  std::string blob;

  auto add_tensor = [&](const std::string& name, const Tensor& t) {
    BufferDesc d;
    d.name = name;
    d.dtype = t.dtype();
    d.shape = t.shape();
    d.offset = blob.size();
    append_values(blob, t.values(), t.dtype());
    d.length = blob.size() - d.offset;
    descs.push_back(std::move(d));
  };
  auto add_raw = [&](const std::string& name, const std::vector<double>& values) {
    BufferDesc d;
    d.name = name;
    d.dtype = Dtype::f64;
    d.shape = {static_cast<int64_t>(values.size())};
    d.offset = blob.size();
    append_values(blob, values, Dtype::f64);
    d.length = blob.size() - d.offset;
    descs.push_back(std::move(d));
  };

  // Emission order is fixed: params, ema, opt moments, each name-sorted
  // (they come from std::map), which pins the bytes.
  for (const auto& [name, t] : ckpt.params.entries) add_tensor("param/" + name, t);
  for (const auto& [name, t] : ckpt.ema.entries) add_tensor("ema/" + name, t);
  for (const auto& [name, v] : ckpt.opt_m) add_raw("opt_m/" + name, v);
  for (const auto& [name, v] : ckpt.opt_v) add_raw("opt_v/" + name, v);

  const std::string config_text = dump_config(ckpt.config);

  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::io, "cannot write checkpoint " + path.string());
  out << kMagic << '\n';
  out << "step " << ckpt.step << '\n';
  out << "opt_step " << ckpt.opt_step << '\n';
  out << "config " << config_text.size() << '\n';
  out << config_text;
  out << "tensors " << descs.size() << '\n';
  for (const auto& d : descs) {
    out << d.name << ' ' << dtype_name(d.dtype) << ' ' << d.shape.size();
    for (int64_t dim : d.shape) out << ' ' << dim;
    out << ' ' << d.offset << ' ' << d.length << '\n';
  }
  out << "data " << blob.size() << '\n';
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  require(out.good(), ErrorKind::io, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open checkpoint " + path.string());
  const std::string where = path.string();

  auto read_line = [&]() {
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::incompatible_checkpoint,
            "truncated checkpoint " + where);
    return line;
  };
  auto expect_kv = [&](const char* key) {
    const std::string line = read_line();
    const std::string prefix = std::string(key) + " ";
    require(line.rfind(prefix, 0) == 0, ErrorKind::incompatible_checkpoint,
            "expected '" + std::string(key) + "' line in " + where);
    return parse_int(std::string_view(line).substr(prefix.size()), where);
  };

  require(read_line() == kMagic, ErrorKind::incompatible_checkpoint,
          "bad magic in " + where);

  Checkpoint ckpt;
  ckpt.step = expect_kv("step");
  ckpt.opt_step = expect_kv("opt_step");

  const int64_t config_bytes = expect_kv("config");
  std::string config_text(static_cast<size_t>(config_bytes), '\0');
  in.read(config_text.data(), config_bytes);
  require(in.gcount() == config_bytes, ErrorKind::incompatible_checkpoint,
          "truncated config block in " + where);
  // Every key is stored explicitly, so the profile must not re-apply its
  // baseline; only the stored name is restored.
  ckpt.config = parse_config_text(config_text, RunConfig{}, where, true);
  {
    std::istringstream cs(config_text);
    std::string line;
    while (std::getline(cs, line)) {
      const auto sv = trim(line);
      if (sv.rfind("profile", 0) == 0) {
        const auto eq = sv.find('=');
        if (eq != std::string_view::npos) ckpt.config.profile = std::string(trim(sv.substr(eq + 1)));
      }
    }
  }

  const int64_t n_tensors = expect_kv("tensors");
  std::vector<BufferDesc> descs;
  descs.reserve(static_cast<size_t>(n_tensors));
  for (int64_t i = 0; i < n_tensors; ++i) {
    const std::string line = read_line();
    const auto tokens = split_whitespace(line);
    require(tokens.size() >= 5, ErrorKind::incompatible_checkpoint,
            "bad tensor row in " + where);
    BufferDesc d;
    d.name = std::string(tokens[0]);
    d.dtype = parse_dtype(std::string(tokens[1]), where);
    const int64_t rank = parse_int(tokens[2], where);
    require(static_cast<int64_t>(tokens.size()) == 5 + rank, ErrorKind::incompatible_checkpoint,
            "bad tensor row arity in " + where);
    int64_t numel = 1;
    for (int64_t r = 0; r < rank; ++r) {
      const int64_t dim = parse_int(tokens[3 + static_cast<size_t>(r)], where);
      require(dim >= 0, ErrorKind::incompatible_checkpoint, "negative dim in " + where);
      d.shape.push_back(dim);
      numel *= dim;
    }
    d.offset = static_cast<size_t>(parse_int(tokens[3 + static_cast<size_t>(rank)], where));
    d.length = static_cast<size_t>(parse_int(tokens[4 + static_cast<size_t>(rank)], where));
    require(d.length == static_cast<size_t>(numel) * elem_size(d.dtype),
            ErrorKind::incompatible_checkpoint,
            "tensor '" + d.name + "' length does not match its shape in " + where);
    descs.push_back(std::move(d));
  }

  const int64_t blob_bytes = expect_kv("data");
  std::string blob(static_cast<size_t>(blob_bytes), '\0');
  in.read(blob.data(), blob_bytes);
  require(in.gcount() == blob_bytes, ErrorKind::incompatible_checkpoint,
          "truncated data block in " + where);

  for (const auto& d : descs) {
    require(d.offset + d.length <= blob.size(), ErrorKind::incompatible_checkpoint,
            "tensor '" + d.name + "' overruns the data block in " + where);
    std::vector<double> values = read_values(blob, d);
    auto strip = [&](const char* prefix) {
      return d.name.substr(std::string(prefix).size());
    };
    if (d.name.rfind("param/", 0) == 0) {
      Tensor t = Tensor::constant(std::move(values), d.shape, d.dtype);
      t.set_requires_grad(true);
      ckpt.params.add(strip("param/"), std::move(t));
    } else if (d.name.rfind("ema/", 0) == 0) {
      ckpt.ema.add(strip("ema/"), Tensor::constant(std::move(values), d.shape, d.dtype));
    } else if (d.name.rfind("opt_m/", 0) == 0) {
      ckpt.opt_m[strip("opt_m/")] = std::move(values);
    } else if (d.name.rfind("opt_v/", 0) == 0) {
      ckpt.opt_v[strip("opt_v/")] = std::move(values);
    } else {
      fail(ErrorKind::incompatible_checkpoint,
           "unknown buffer '" + d.name + "' in " + where);
    }
  }
  return ckpt;
}

ParamStore extract_encoder(const Checkpoint& ckpt) {
  ParamStore enc = ckpt.params.subset("encoder.");
  require(!enc.entries.empty(), ErrorKind::incompatible_checkpoint,
          "checkpoint holds no encoder parameters");
  return enc;
}

}  // namespace msp
