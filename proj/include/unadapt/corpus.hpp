#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace unadapt {

class LanguageModelClient;

// Ordered class labels. Position in `labels()` is the logit index.
class ClassCatalog {
 public:
  ClassCatalog() = default;
  ClassCatalog(std::string dataset_id, std::vector<std::string> labels);

  const std::string& dataset_id() const { return dataset_id_; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }

  // Throws DataError if the label is unknown.
  std::size_t index_of(const std::string& label) const;
  bool contains(const std::string& label) const;

  bool operator==(const ClassCatalog&) const = default;

 private:
  std::string dataset_id_;
  std::vector<std::string> labels_;
};

struct PromptTemplate {
  std::string template_id;
  std::string text;  // exactly one "{class}" placeholder
  std::string dataset_id;

  std::string render(const std::string& label) const;
};

struct PromptQuery {
  std::string label;
  std::string template_id;
  std::string query;
};

struct Description {
  std::string template_id;
  std::string text;
  bool operator==(const Description&) const = default;
};

// Per-class LLM descriptions. Immutable once constructed; the constructor
// enforces completeness and non-blank text.
class DescriptionCorpus {
 public:
  DescriptionCorpus(ClassCatalog catalog, std::map<std::string, std::vector<Description>> entries,
                    std::string generator, std::string created_at);

  const ClassCatalog& catalog() const { return catalog_; }
  const std::map<std::string, std::vector<Description>>& entries() const { return entries_; }
  const std::vector<Description>& descriptions(const std::string& label) const;
  const std::string& generator() const { return generator_; }
  const std::string& created_at() const { return created_at_; }

  std::size_t total_descriptions() const;
  std::vector<std::size_t> counts_per_class() const;

  // Throws ConsistencyError unless the label order equals `expected`.
  void validate_against(const ClassCatalog& expected) const;

  bool operator==(const DescriptionCorpus&) const = default;

 private:
  ClassCatalog catalog_;
  std::map<std::string, std::vector<Description>> entries_;
  std::string generator_;
  std::string created_at_;
};

std::vector<PromptQuery> build_prompts(const ClassCatalog& catalog,
                                       const std::vector<PromptTemplate>& templates);

struct GenerationOptions {
  int retries = 3;
  int samples_per_query = 1;
  int max_in_flight = 4;
  int retry_backoff_ms = 250;
  std::string created_at;  // empty: current UTC time
};

struct GenerationResult {
  DescriptionCorpus corpus;
  std::vector<std::string> warnings;
};

GenerationResult generate_descriptions(const ClassCatalog& catalog,
                                       const std::vector<PromptQuery>& queries,
                                       LanguageModelClient& llm,
                                       const GenerationOptions& options = {});

std::string corpus_to_json(const DescriptionCorpus& corpus);
DescriptionCorpus corpus_from_json(const std::string& text, const std::string& source = "<memory>");

void save_corpus(const DescriptionCorpus& corpus, const std::filesystem::path& path);
DescriptionCorpus load_corpus(const std::filesystem::path& path);

ClassCatalog load_catalog(const std::filesystem::path& path);
void save_catalog(const ClassCatalog& catalog, const std::filesystem::path& path);
std::vector<PromptTemplate> load_templates(const std::filesystem::path& path);

std::string utc_timestamp();

}  // namespace unadapt
