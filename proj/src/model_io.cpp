#include "relux/model_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "relux/errors.hpp"

namespace relux {

std::string format_hex(double value) {
  if (!std::isfinite(value)) throw FormatError("cannot encode non-finite value");
  char buf[64];
  const bool negative = std::signbit(value);
  auto res = std::to_chars(buf, buf + sizeof buf, std::abs(value), std::chars_format::hex);
  std::string out = negative ? "-0x" : "0x";
  out.append(buf, res.ptr);
  return out;
}

double parse_hex(std::string_view tok) {
  std::string_view s = tok;
  bool negative = false;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    negative = s.front() == '-';
    s.remove_prefix(1);
  }
  if (s.size() < 3 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X'))
    throw FormatError("expected hex float, got '" + std::string(tok) + "'");
  s.remove_prefix(2);
  if (s.front() == '-' || s.front() == '+')
    throw FormatError("malformed hex float '" + std::string(tok) + "'");
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw FormatError("malformed hex float '" + std::string(tok) + "'");
  if (!std::isfinite(v)) throw FormatError("non-finite value '" + std::string(tok) + "'");
  return negative ? -v : v;
}

std::vector<double> parse_hex_list(std::string_view line) {
  std::vector<double> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    out.push_back(parse_hex(line.substr(i, j - i)));
    i = j;
  }
  return out;
}

std::string format_hex_list(const Vector& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out.push_back(' ');
    out += format_hex(v[i]);
  }
  return out;
}

namespace {

void write_row(std::ostringstream& os, const auto& row) {
  for (Eigen::Index j = 0; j < row.size(); ++j) {
    if (j) os << ' ';
    os << format_hex(row[j]);
  }
  os << '\n';
}

std::size_t parse_dim(const std::string& field, const char* key) {
  const std::string prefix = std::string(key) + "=";
  if (field.rfind(prefix, 0) != 0) throw FormatError("model header: expected " + prefix);
  std::size_t value = 0;
  const char* first = field.data() + prefix.size();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || value == 0)
    throw FormatError("model header: bad value for " + std::string(key));
  return value;
}

}  // namespace

std::string serialize(const TwoLayerNet& net) {
  std::ostringstream os;
  os << "relu2 v1 d=" << net.d() << " h=" << net.h() << " k=" << net.k() << '\n';
  for (Eigen::Index i = 0; i < net.a0().rows(); ++i) write_row(os, net.a0().row(i));
  write_row(os, net.b0());
  for (Eigen::Index i = 0; i < net.a1().rows(); ++i) write_row(os, net.a1().row(i));
  write_row(os, net.b1());
  return os.str();
}

TwoLayerNet deserialize(std::string_view blob) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < blob.size()) {
    std::size_t end = blob.find('\n', start);
    if (end == std::string_view::npos) end = blob.size();
    std::string_view line = blob.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw FormatError("empty model blob");

  std::istringstream header{std::string(lines[0])};
  std::string magic, version, fd, fh, fk, extra;
  header >> magic >> version >> fd >> fh >> fk;
  if (magic != "relu2" || version != "v1") throw FormatError("model header: expected 'relu2 v1'");
  if (header >> extra) throw FormatError("model header: trailing fields");
  const std::size_t d = parse_dim(fd, "d");
  const std::size_t h = parse_dim(fh, "h");
  const std::size_t k = parse_dim(fk, "k");

  const std::size_t expected_lines = 1 + h + 1 + k + 1;
  if (lines.size() != expected_lines)
    throw FormatError("model shape mismatch: header implies " + std::to_string(expected_lines) +
                      " lines, found " + std::to_string(lines.size()));

  std::size_t cursor = 1;
  auto read_row = [&](std::size_t width, const char* what) {
    const auto values = parse_hex_list(lines[cursor]);
    if (values.size() != width)
      throw FormatError(std::string("model shape mismatch in ") + what + " (line " +
                        std::to_string(cursor + 1) + "): expected " + std::to_string(width) +
                        " values, found " + std::to_string(values.size()));
    ++cursor;
    return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size())).eval();
  };

  Matrix a0(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < h; ++i) a0.row(static_cast<Eigen::Index>(i)) = read_row(d, "a0").transpose();
  Vector b0 = read_row(h, "b0");
  Matrix a1(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(h));
  for (std::size_t i = 0; i < k; ++i) a1.row(static_cast<Eigen::Index>(i)) = read_row(h, "a1").transpose();
  Vector b1 = read_row(k, "b1");
  return TwoLayerNet(std::move(a0), std::move(b0), std::move(a1), std::move(b1));
}

void save_model(const TwoLayerNet& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << serialize(net);
  if (!out) throw Error("failed writing " + path.string());
}

TwoLayerNet load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace relux
