#include "attriqe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "attriqe/util.hpp"

namespace attriqe::ad {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian hosts");

template <typename T>
std::size_t ParameterSet<T>::add(std::string name, Tensor<T> value) {
  if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
    throw ContractError("parameter names must be non-empty and contain no whitespace");
  }
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
  return tensors_.size() - 1;
}

template <typename T>
std::size_t ParameterSet<T>::index(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

template <typename T>
bool ParameterSet<T>::contains(std::string_view name) const {
  for (const auto& n : names_)
    if (n == name) return true;
  return false;
}

template <typename T>
std::size_t ParameterSet<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

template <typename T>
std::uint64_t ParameterSet<T>::checksum() const {
  std::uint64_t h = fnv1a(std::string_view{});
  for (std::size_t i = 0; i < size(); ++i) {
    h = fnv1a(names_[i], h);
    h = fnv1a(std::as_bytes(tensors_[i].values()), h);
  }
  return h;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params) {
  std::ostringstream out(std::ios::binary);
  out << kCheckpointMagic << '\n'
      << "precision " << precision_tag(precision_of<T>()) << '\n'
      << "count " << params.size() << '\n';
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor<T>& t = params[i];
    out << params.name(i) << ' ' << t.rank();
    for (auto d : t.shape()) out << ' ' << d;
    out << '\n';
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
    out << '\n';
  }
  write_file(path, out.str());
}

namespace {

std::string read_line(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("truncated checkpoint '" + path.string() + "'");
  return line;
}

template <typename From, typename To>
Tensor<To> read_tensor(std::istream& in, Shape shape, const std::filesystem::path& path) {
  std::vector<From> raw(element_count(shape));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(From)));
  if (!in) throw ParseError("truncated tensor data in '" + path.string() + "'");
  if (in.get() != '\n') throw ParseError("missing tensor terminator in '" + path.string() + "'");
  return Tensor<To>(std::move(shape), std::vector<To>(raw.begin(), raw.end()));
}

Precision read_header(std::istream& in, const std::filesystem::path& path, std::size_t& count) {
  if (read_line(in, path) != kCheckpointMagic) {
    throw ParseError("'" + path.string() + "' is not an " + std::string(kCheckpointMagic) + " checkpoint");
  }
  std::istringstream p(read_line(in, path));
  std::string key, tag;
  p >> key >> tag;
  if (key != "precision") throw ParseError("checkpoint missing precision tag");
  const Precision precision = parse_precision(tag);
  std::istringstream c(read_line(in, path));
  c >> key >> count;
  if (key != "count" || !c) throw ParseError("checkpoint missing tensor count");
  return precision;
}

}  // namespace

Precision checkpoint_precision(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open checkpoint '" + path.string() + "'");
  std::size_t count = 0;
  return read_header(in, path, count);
}

template <typename T>
ParameterSet<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open checkpoint '" + path.string() + "'");
  std::size_t count = 0;
  const Precision precision = read_header(in, path, count);
  ParameterSet<T> params;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream h(read_line(in, path));
    std::string name;
    std::size_t rank = 0;
    h >> name >> rank;
    Shape shape(rank);
    for (auto& d : shape) h >> d;
    if (!h) throw ParseError("malformed tensor header in '" + path.string() + "'");
    if (precision == Precision::f32) {
      params.add(name, read_tensor<float, T>(in, std::move(shape), path));
    } else {
      params.add(name, read_tensor<double, T>(in, std::move(shape), path));
    }
  }
  return params;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template void save_checkpoint<float>(const std::filesystem::path&, const ParameterSet<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const ParameterSet<double>&);
template ParameterSet<float> load_checkpoint<float>(const std::filesystem::path&);
template ParameterSet<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace attriqe::ad
