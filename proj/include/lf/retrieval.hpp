#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace lf {

// Row-major multi-vector embedding, one row per token.
struct EmbeddingMatrix {
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::vector<float> data;  // rows * dim

    const float* row(std::size_t i) const { return data.data() + i * dim; }
    float* row(std::size_t i) { return data.data() + i * dim; }
};

enum class Similarity {
    dot,
    cosine,
};

Similarity similarity_from_string(const std::string& name);
const char* to_string(Similarity similarity);

struct PageIndex {
    std::size_t dim = 0;
    std::vector<std::pair<std::string, EmbeddingMatrix>> entries;  // insertion order
    std::string metadata;
};

struct ScoredPage {
    std::string page_id;
    double score = 0.0;
};

struct RetrievalResult {
    std::string query_id;
    std::vector<ScoredPage> ranked;  // scores non-increasing, ties by page_id
    int k = 0;
};

// Late-interaction score: sum over query rows of the max dot product
// against any page row. No normalization in dot mode; cosine mode
// normalizes each row pair.
double maxsim_score(const EmbeddingMatrix& query, const EmbeddingMatrix& page,
                    Similarity similarity = Similarity::dot);

RetrievalResult retrieve_topk(const PageIndex& index, const EmbeddingMatrix& query, int k,
                              Similarity similarity = Similarity::dot,
                              const std::string& query_id = "");

// Fraction of queries whose top-k holds at least one gold page. Queries
// with no gold pages are excluded from the denominator; their count lands
// in *skipped.
double recall_at_k(const std::vector<RetrievalResult>& results,
                   const std::map<std::string, std::set<std::string>>& golds, int k,
                   std::size_t* skipped = nullptr);

// Mean reciprocal rank of the first gold page within the top-k, 0 when absent.
double mrr_at_k(const std::vector<RetrievalResult>& results,
                const std::map<std::string, std::set<std::string>>& golds, int k,
                std::size_t* skipped = nullptr);

// Binary index file: "LFIDX1", u32 dim, u32 page count, then per page
// u16 id length, id bytes, u32 rows, rows*dim little-endian f32.
void save_index(const PageIndex& index, const std::string& path);
PageIndex load_index(const std::string& path);

// Compiles the portable JSONL ingestion format (one object per line with
// page_id/rows/dim/values) into an in-memory index.
PageIndex build_index_from_jsonl(const std::string& path);

// Loads embeddings keyed by `id_key` from the same JSONL shape.
std::vector<std::pair<std::string, EmbeddingMatrix>> load_embeddings_jsonl(
    const std::string& path, const std::string& id_key);

}  // namespace lf
