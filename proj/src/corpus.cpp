#include "unadapt/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <set>
#include <thread>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "unadapt/error.hpp"
#include "unadapt/llm_client.hpp"
#include "unadapt/util.hpp"

namespace unadapt {

using ojson = nlohmann::ordered_json;

namespace {
constexpr std::string_view kPlaceholder = "{class}";

std::size_t count_placeholders(const std::string& text) {
  std::size_t n = 0;
  for (auto pos = text.find(kPlaceholder); pos != std::string::npos;
       pos = text.find(kPlaceholder, pos + kPlaceholder.size())) {
    ++n;
  }
  return n;
}
}  // namespace

ClassCatalog::ClassCatalog(std::string dataset_id, std::vector<std::string> labels)
    : dataset_id_(std::move(dataset_id)), labels_(std::move(labels)) {
  std::set<std::string> seen;
  for (const auto& l : labels_) {
    if (is_blank(l)) throw ValidationError("catalog '" + dataset_id_ + "': empty class label");
    if (!seen.insert(l).second) {
      throw ValidationError("catalog '" + dataset_id_ + "': duplicate class label '" + l + "'");
    }
  }
}

std::size_t ClassCatalog::index_of(const std::string& label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) {
    throw DataError("label '" + label + "' is not in catalog '" + dataset_id_ + "'");
  }
  return static_cast<std::size_t>(it - labels_.begin());
}

bool ClassCatalog::contains(const std::string& label) const {
  return std::find(labels_.begin(), labels_.end(), label) != labels_.end();
}

std::string PromptTemplate::render(const std::string& label) const {
  std::string out = text;
  auto pos = out.find(kPlaceholder);
  if (pos == std::string::npos) {
    throw ValidationError("template '" + template_id + "' has no {class} placeholder");
  }
  out.replace(pos, kPlaceholder.size(), label);
  return out;
}

DescriptionCorpus::DescriptionCorpus(ClassCatalog catalog,
                                     std::map<std::string, std::vector<Description>> entries,
                                     std::string generator, std::string created_at)
    : catalog_(std::move(catalog)),
      entries_(std::move(entries)),
      generator_(std::move(generator)),
      created_at_(std::move(created_at)) {
  if (is_blank(generator_)) throw ValidationError("corpus: generator provenance is required");
  for (const auto& [label, descs] : entries_) {
    if (!catalog_.contains(label)) {
      throw ConsistencyError("corpus: entries contain label '" + label + "' absent from catalog");
    }
    for (std::size_t i = 0; i < descs.size(); ++i) {
      if (is_blank(descs[i].text)) {
        throw DataError("corpus: description " + std::to_string(i) + " of '" + label +
                        "' is empty");
      }
    }
  }
  for (const auto& label : catalog_.labels()) {
    auto it = entries_.find(label);
    if (it == entries_.end() || it->second.empty()) {
      throw CorpusIncompleteError("corpus: class '" + label + "' has no descriptions");
    }
  }
}

const std::vector<Description>& DescriptionCorpus::descriptions(const std::string& label) const {
  auto it = entries_.find(label);
  if (it == entries_.end()) throw DataError("corpus: no descriptions for '" + label + "'");
  return it->second;
}

std::size_t DescriptionCorpus::total_descriptions() const {
  std::size_t n = 0;
  for (const auto& [_, d] : entries_) n += d.size();
  return n;
}

std::vector<std::size_t> DescriptionCorpus::counts_per_class() const {
  std::vector<std::size_t> out;
  for (const auto& label : catalog_.labels()) out.push_back(entries_.at(label).size());
  return out;
}

void DescriptionCorpus::validate_against(const ClassCatalog& expected) const {
  if (catalog_.dataset_id() != expected.dataset_id()) {
    throw ConsistencyError("corpus dataset '" + catalog_.dataset_id() +
                           "' does not match catalog dataset '" + expected.dataset_id() + "'");
  }
  if (catalog_.labels() != expected.labels()) {
    std::string got, want;
    for (const auto& l : catalog_.labels()) got += (got.empty() ? "" : ",") + l;
    for (const auto& l : expected.labels()) want += (want.empty() ? "" : ",") + l;
    throw ConsistencyError("corpus label order [" + got + "] differs from catalog [" + want + "]");
  }
}

std::vector<PromptQuery> build_prompts(const ClassCatalog& catalog,
                                       const std::vector<PromptTemplate>& templates) {
  std::vector<PromptQuery> out;
  out.reserve(templates.size() * catalog.size());
  for (const auto& t : templates) {
    if (count_placeholders(t.text) != 1) {
      throw ValidationError("template '" + t.template_id +
                            "' must contain exactly one {class} placeholder");
    }
    if (t.dataset_id != catalog.dataset_id()) {
      throw ValidationError("template '" + t.template_id + "' targets dataset '" + t.dataset_id +
                            "', catalog is '" + catalog.dataset_id() + "'");
    }
  }
  for (const auto& t : templates) {
    for (const auto& label : catalog.labels()) {
      out.push_back({label, t.template_id, t.render(label)});
    }
  }
  return out;
}

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

GenerationResult generate_descriptions(const ClassCatalog& catalog,
                                       const std::vector<PromptQuery>& queries,
                                       LanguageModelClient& llm,
                                       const GenerationOptions& options) {
  struct Outcome {
    std::vector<std::string> texts;
    std::vector<std::string> warnings;
    std::exception_ptr error;
  };
  std::vector<Outcome> outcomes(queries.size());

  auto run_query = [&](std::size_t qi) {
    const auto& q = queries[qi];
    auto& out = outcomes[qi];
    for (int s = 0; s < options.samples_per_query; ++s) {
      std::string completion;
      for (int attempt = 0;; ++attempt) {
        try {
          completion = llm.complete(q.query);
          break;
        } catch (const TransportError& e) {
          if (attempt >= options.retries) {
            out.error = std::make_exception_ptr(TransportError(
                "query '" + q.query + "' failed after " + std::to_string(attempt + 1) +
                " attempts: " + e.what()));
            return;
          }
          if (options.retry_backoff_ms > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(options.retry_backoff_ms * (attempt + 1)));
          }
        }
      }
      std::string text = trim(completion);
      if (text.empty()) {
        out.warnings.push_back("empty completion for query '" + q.query + "' (class '" + q.label +
                               "', template '" + q.template_id + "'); skipped");
        continue;
      }
      out.texts.push_back(std::move(text));
    }
  };

  const std::size_t workers =
      std::min<std::size_t>(std::max(1, options.max_in_flight), std::max<std::size_t>(1, queries.size()));
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t qi = next++; qi < queries.size(); qi = next++) run_query(qi);
    });
  }
  pool.clear();

  std::map<std::string, std::vector<Description>> entries;
  std::vector<std::string> warnings;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    if (outcomes[qi].error) std::rethrow_exception(outcomes[qi].error);
    for (auto& w : outcomes[qi].warnings) {
      spdlog::warn("{}", w);
      warnings.push_back(std::move(w));
    }
    for (auto& t : outcomes[qi].texts) {
      entries[queries[qi].label].push_back({queries[qi].template_id, std::move(t)});
    }
  }
  for (const auto& label : catalog.labels()) {
    if (!entries.count(label)) {
      throw CorpusIncompleteError("generation produced no descriptions for class '" + label + "'");
    }
  }
  std::string created = options.created_at.empty() ? utc_timestamp() : options.created_at;
  return {DescriptionCorpus(catalog, std::move(entries), llm.model_id(), std::move(created)),
          std::move(warnings)};
}

std::string corpus_to_json(const DescriptionCorpus& corpus) {
  ojson doc;
  doc["dataset_id"] = corpus.catalog().dataset_id();
  doc["generator"] = corpus.generator();
  doc["created_at"] = corpus.created_at();
  doc["labels"] = corpus.catalog().labels();
  ojson entries = ojson::object();
  for (const auto& label : corpus.catalog().labels()) {
    ojson list = ojson::array();
    for (const auto& d : corpus.descriptions(label)) {
      list.push_back({{"template_id", d.template_id}, {"text", d.text}});
    }
    entries[label] = std::move(list);
  }
  doc["entries"] = std::move(entries);
  return doc.dump(2) + "\n";
}

namespace {

template <typename T>
T field(const ojson& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const ojson::exception&) {
    throw ParseError(where + "." + key + ": wrong type (" + obj.at(key).type_name() + ")");
  }
}

ojson parse_document(const std::string& text, const std::string& source) {
  try {
    return ojson::parse(text);
  } catch (const ojson::parse_error& e) {
    // nlohmann reports "line L, column C" in the message.
    throw ParseError(source + ": " + e.what());
  }
}

}  // namespace

DescriptionCorpus corpus_from_json(const std::string& text, const std::string& source) {
  ojson doc = parse_document(text, source);
  auto labels = field<std::vector<std::string>>(doc, "labels", source);
  ClassCatalog catalog(field<std::string>(doc, "dataset_id", source), labels);
  if (!doc.contains("entries") || !doc["entries"].is_object()) {
    throw ParseError(source + ": missing object field 'entries'");
  }
  std::map<std::string, std::vector<Description>> entries;
  for (const auto& [label, list] : doc["entries"].items()) {
    std::string where = source + ": entries." + label;
    if (!list.is_array()) throw ParseError(where + ": expected array");
    auto& dst = entries[label];
    for (std::size_t i = 0; i < list.size(); ++i) {
      std::string at = where + "[" + std::to_string(i) + "]";
      dst.push_back({field<std::string>(list[i], "template_id", at),
                     field<std::string>(list[i], "text", at)});
    }
  }
  return DescriptionCorpus(std::move(catalog), std::move(entries),
                           field<std::string>(doc, "generator", source),
                           field<std::string>(doc, "created_at", source));
}

void save_corpus(const DescriptionCorpus& corpus, const std::filesystem::path& path) {
  write_file_atomic(path, corpus_to_json(corpus));
}

DescriptionCorpus load_corpus(const std::filesystem::path& path) {
  return corpus_from_json(read_file(path), path.string());
}

ClassCatalog load_catalog(const std::filesystem::path& path) {
  ojson doc = parse_document(read_file(path), path.string());
  return ClassCatalog(field<std::string>(doc, "dataset_id", path.string()),
                      field<std::vector<std::string>>(doc, "labels", path.string()));
}

void save_catalog(const ClassCatalog& catalog, const std::filesystem::path& path) {
  ojson doc;
  doc["dataset_id"] = catalog.dataset_id();
  doc["labels"] = catalog.labels();
  write_file_atomic(path, doc.dump(2) + "\n");
}

std::vector<PromptTemplate> load_templates(const std::filesystem::path& path) {
  ojson doc = parse_document(read_file(path), path.string());
  if (!doc.is_array()) throw ParseError(path.string() + ": expected an array of templates");
  std::vector<PromptTemplate> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    std::string at = path.string() + "[" + std::to_string(i) + "]";
    out.push_back({field<std::string>(doc[i], "template_id", at), field<std::string>(doc[i], "text", at),
                   field<std::string>(doc[i], "dataset_id", at)});
  }
  return out;
}

}  // namespace unadapt
