#include "unadapt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "unadapt/error.hpp"
#include "unadapt/util.hpp"

namespace unadapt {

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    default: return "";
  }
}

Split split_from_string(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) return Split::kUnassigned;
  if (t == "train") return Split::kTrain;
  if (t == "val" || t == "valid" || t == "validation") return Split::kVal;
  if (t == "test") return Split::kTest;
  throw ParseError("unknown split '" + t + "'");
}

Manifest Manifest::subset(Split s) const {
  Manifest m;
  m.base_dir = base_dir;
  for (const auto& it : items)
    if (it.split == s) m.items.push_back(it);
  return m;
}

bool Manifest::any_labels() const {
  return std::any_of(items.begin(), items.end(), [](const auto& i) { return i.label.has_value(); });
}

bool Manifest::all_labeled() const {
  return std::all_of(items.begin(), items.end(), [](const auto& i) { return i.label.has_value(); });
}

std::filesystem::path Manifest::resolve(const ManifestItem& item) const {
  std::filesystem::path p(item.path);
  return p.is_absolute() ? p : base_dir / p;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line, const std::string& where) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw ParseError(where + ": unterminated quote");
  out.push_back(std::move(cur));
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

}  // namespace

Manifest parse_manifest(const std::string& csv, const std::filesystem::path& base_dir, const std::string& source) {
  Manifest m;
  m.base_dir = base_dir;
  std::size_t line_no = 0, pos = 0;
  std::map<std::string, std::size_t> col;
  std::set<std::string> seen;
  while (pos <= csv.size()) {
    std::size_t nl = csv.find('\n', pos);
    if (nl == std::string::npos) nl = csv.size();
    std::string line = csv.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_blank(line) || line[0] == '#') continue;
    const std::string where = source + ":" + std::to_string(line_no);
    auto fields = split_csv_line(line, where);
    if (col.empty()) {
      for (std::size_t i = 0; i < fields.size(); ++i) col[trim(fields[i])] = i;
      for (const char* required : {"item_id", "path", "split"}) {
        if (!col.count(required)) throw ParseError(where + ": header lacks column '" + required + "'");
      }
      continue;
    }
    auto get = [&](const std::string& name) -> std::string {
      auto it = col.find(name);
      if (it == col.end()) return "";
      if (it->second >= fields.size()) throw ParseError(where + ": missing field '" + name + "'");
      return trim(fields[it->second]);
    };
    ManifestItem item;
    item.item_id = get("item_id");
    item.path = get("path");
    if (item.item_id.empty()) throw ParseError(where + ": empty item_id");
    if (item.path.empty()) throw ParseError(where + ": empty path");
    try {
      item.split = split_from_string(get("split"));
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (std::string label = get("label"); !label.empty()) item.label = label;
    if (!seen.insert(item.item_id).second) throw DataError(where + ": duplicate item_id '" + item.item_id + "'");
    m.items.push_back(std::move(item));
  }
  if (col.empty()) throw ParseError(source + ": empty manifest");
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_file(path), path.parent_path(), path.string());
}

std::string manifest_to_csv(const Manifest& manifest) {
  std::string out = "item_id,path,split,label\n";
  for (const auto& it : manifest.items) {
    out += csv_field(it.item_id) + "," + csv_field(it.path) + "," + to_string(it.split) + "," +
           csv_field(it.label.value_or("")) + "\n";
  }
  return out;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  write_file_atomic(path, manifest_to_csv(manifest));
}

void SplitFractions::validate() const {
  for (double f : {train, val, test}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("split fractions must lie in [0, 1]");
  }
  if (std::abs(train + val + test - 1.0) > 1e-9) {
    throw ValidationError("split fractions must sum to 1 (got " + std::to_string(train + val + test) + ")");
  }
}

std::array<std::size_t, 3> apportion(std::size_t n, const SplitFractions& f) {
  f.validate();
  const std::array<double, 3> frac{f.train, f.val, f.test};
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = frac[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(sizes[i]);
    used += sizes[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b] + 1e-12; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++sizes[order[k % 3]];
  return sizes;
}

SplitResult split_dataset(const Manifest& manifest, const SplitFractions& fractions, std::uint64_t seed,
                          bool stratified) {
  fractions.validate();
  SplitResult r;
  r.train.base_dir = r.val.base_dir = r.test.base_dir = manifest.base_dir;

  std::map<std::string, std::vector<std::size_t>> groups;
  if (stratified && !manifest.any_labels()) {
    r.warnings.push_back("manifest has no labels; falling back to an unstratified split");
    stratified = false;
  }
  if (stratified) {
    if (!manifest.all_labeled()) throw DataError("stratified split needs a label on every item");
    for (std::size_t i = 0; i < manifest.items.size(); ++i) groups[*manifest.items[i].label].push_back(i);
    std::string small;
    for (const auto& [label, idx] : groups) {
      if (idx.size() < 3) small += (small.empty() ? "" : ", ") + label + "=" + std::to_string(idx.size());
    }
    if (!small.empty()) throw DataError("classes too small for a stratified split (need >= 3): " + small);
  } else {
    auto& all = groups[""];
    all.resize(manifest.items.size());
    std::iota(all.begin(), all.end(), 0);
  }

  std::vector<Split> assigned(manifest.items.size(), Split::kUnassigned);
  for (auto& [label, idx] : groups) {
    std::mt19937_64 rng(derive_seed(seed, "split", fnv1a(label)));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto sizes = apportion(idx.size(), fractions);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      assigned[idx[j]] = j < sizes[0] ? Split::kTrain : j < sizes[0] + sizes[1] ? Split::kVal : Split::kTest;
    }
  }
  for (std::size_t i = 0; i < manifest.items.size(); ++i) {
    ManifestItem it = manifest.items[i];
    it.split = assigned[i];
    (assigned[i] == Split::kTrain ? r.train : assigned[i] == Split::kVal ? r.val : r.test).items.push_back(it);
  }
  return r;
}

Manifest assign_splits(const SplitResult& r) {
  Manifest m;
  m.base_dir = r.train.base_dir;
  for (const Manifest* part : {&r.train, &r.val, &r.test})
    m.items.insert(m.items.end(), part->items.begin(), part->items.end());
  return m;
}

std::vector<DataItem> load_items(const Manifest& manifest, Split split, const ClassCatalog& catalog) {
  std::vector<DataItem> out;
  for (const auto& it : manifest.items) {
    if (it.split != split) continue;
    DataItem d;
    d.item_id = it.item_id;
    d.image = load_image(manifest.resolve(it));
    if (it.label) {
      if (!catalog.contains(*it.label)) {
        throw DataError("item '" + it.item_id + "' has label '" + *it.label + "' outside the catalog");
      }
      d.label = catalog.index_of(*it.label);
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace unadapt
