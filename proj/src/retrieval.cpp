#include "lf/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

#include "lf/errors.hpp"

#include <json.hpp>

namespace lf {

namespace {

using json = nlohmann::json;

constexpr char kMagic[6] = {'L', 'F', 'I', 'D', 'X', '1'};

void write_u16(std::ostream& out, std::uint16_t value) {
    const char bytes[2] = {static_cast<char>(value & 0xff), static_cast<char>(value >> 8)};
    out.write(bytes, 2);
}

void write_u32(std::ostream& out, std::uint32_t value) {
    char bytes[4];
    for (int i = 0; i < 4; ++i) {
        bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
    }
    out.write(bytes, 4);
}

std::uint16_t read_u16(std::istream& in) {
    unsigned char bytes[2];
    in.read(reinterpret_cast<char*>(bytes), 2);
    if (!in) {
        throw FormatError("index file truncated");
    }
    return static_cast<std::uint16_t>(bytes[0] | (bytes[1] << 8));
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (!in) {
        throw FormatError("index file truncated");
    }
    std::uint32_t value = 0;
    for (int i = 0; i < 4; ++i) {
        value |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
    }
    return value;
}

double row_dot(const float* a, const float* b, std::size_t dim) {
    double sum = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return sum;
}

double row_norm(const float* a, std::size_t dim) {
    return std::sqrt(row_dot(a, a, dim));
}

EmbeddingMatrix matrix_from_json(const json& doc, const std::string& context) {
    if (!doc.contains("rows") || !doc.contains("dim") || !doc.contains("values") ||
        !doc["values"].is_array()) {
        throw SchemaError(context + ": expected rows, dim and values");
    }
    EmbeddingMatrix matrix;
    matrix.rows = doc["rows"].get<std::size_t>();
    matrix.dim = doc["dim"].get<std::size_t>();
    if (matrix.rows < 1 || matrix.dim < 1) {
        throw SchemaError(context + ": rows and dim must be >= 1");
    }
    const auto& values = doc["values"];
    if (values.size() != matrix.rows * matrix.dim) {
        throw SchemaError(context + ": values length " + std::to_string(values.size()) +
                          " != rows*dim " + std::to_string(matrix.rows * matrix.dim));
    }
    matrix.data.reserve(values.size());
    for (const auto& v : values) {
        if (!v.is_number()) {
            throw SchemaError(context + ": values must be numbers");
        }
        const float f = v.get<float>();
        if (!std::isfinite(f)) {
            throw SchemaError(context + ": values must be finite");
        }
        matrix.data.push_back(f);
    }
    return matrix;
}

}  // namespace

Similarity similarity_from_string(const std::string& name) {
    if (name == "dot") {
        return Similarity::dot;
    }
    if (name == "cosine") {
        return Similarity::cosine;
    }
    throw ConfigError("unknown similarity: " + name);
}

const char* to_string(Similarity similarity) {
    return similarity == Similarity::cosine ? "cosine" : "dot";
}

double maxsim_score(const EmbeddingMatrix& query, const EmbeddingMatrix& page,
                    Similarity similarity) {
    if (query.dim != page.dim) {
        throw DimensionMismatch("maxsim_score: query dim " + std::to_string(query.dim) +
                                " != page dim " + std::to_string(page.dim));
    }
    std::vector<double> best_per_row;
    best_per_row.reserve(query.rows);
    for (std::size_t i = 0; i < query.rows; ++i) {
        const float* q = query.row(i);
        const double q_norm = similarity == Similarity::cosine ? row_norm(q, query.dim) : 1.0;
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < page.rows; ++j) {
            const float* p = page.row(j);
            double score = row_dot(q, p, query.dim);
            if (similarity == Similarity::cosine) {
                const double p_norm = row_norm(p, page.dim);
                score = (q_norm == 0.0 || p_norm == 0.0) ? 0.0 : score / (q_norm * p_norm);
            }
            best = std::max(best, score);
        }
        best_per_row.push_back(page.rows == 0 ? 0.0 : best);
    }
    // Summing in sorted order keeps the result invariant under query-row
    // permutations.
    std::sort(best_per_row.begin(), best_per_row.end());
    double total = 0.0;
    for (double v : best_per_row) {
        total += v;
    }
    return total;
}

RetrievalResult retrieve_topk(const PageIndex& index, const EmbeddingMatrix& query, int k,
                              Similarity similarity, const std::string& query_id) {
    if (k < 1) {
        throw Error("retrieve_topk: k must be >= 1");
    }
    if (index.entries.empty()) {
        throw EmptyIndex("retrieve_topk: index has no pages");
    }
    if (query.dim != index.dim) {
        throw DimensionMismatch("retrieve_topk: query dim " + std::to_string(query.dim) +
                                " != index dim " + std::to_string(index.dim));
    }

    std::vector<ScoredPage> scored;
    scored.reserve(index.entries.size());
    for (const auto& [page_id, matrix] : index.entries) {
        scored.push_back({page_id, maxsim_score(query, matrix, similarity)});
    }
    std::sort(scored.begin(), scored.end(), [](const ScoredPage& a, const ScoredPage& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return a.page_id < b.page_id;
    });
    scored.resize(std::min<std::size_t>(scored.size(), static_cast<std::size_t>(k)));

    RetrievalResult result;
    result.query_id = query_id;
    result.ranked = std::move(scored);
    result.k = k;
    return result;
}

namespace {

template <typename PerQuery>
double mean_over_judged(const std::vector<RetrievalResult>& results,
                        const std::map<std::string, std::set<std::string>>& golds,
                        std::size_t* skipped, PerQuery per_query) {
    std::size_t evaluated = 0;
    std::size_t skipped_count = 0;
    double total = 0.0;
    for (const RetrievalResult& result : results) {
        const auto it = golds.find(result.query_id);
        if (it == golds.end() || it->second.empty()) {
            ++skipped_count;
            continue;
        }
        total += per_query(result, it->second);
        ++evaluated;
    }
    if (skipped != nullptr) {
        *skipped = skipped_count;
    }
    return evaluated == 0 ? 0.0 : total / static_cast<double>(evaluated);
}

}  // namespace

double recall_at_k(const std::vector<RetrievalResult>& results,
                   const std::map<std::string, std::set<std::string>>& golds, int k,
                   std::size_t* skipped) {
    return mean_over_judged(results, golds, skipped,
                            [k](const RetrievalResult& result, const std::set<std::string>& gold) {
                                const std::size_t limit = std::min<std::size_t>(
                                    result.ranked.size(), static_cast<std::size_t>(k));
                                for (std::size_t i = 0; i < limit; ++i) {
                                    if (gold.count(result.ranked[i].page_id) > 0) {
                                        return 1.0;
                                    }
                                }
                                return 0.0;
                            });
}

double mrr_at_k(const std::vector<RetrievalResult>& results,
                const std::map<std::string, std::set<std::string>>& golds, int k,
                std::size_t* skipped) {
    return mean_over_judged(results, golds, skipped,
                            [k](const RetrievalResult& result, const std::set<std::string>& gold) {
                                const std::size_t limit = std::min<std::size_t>(
                                    result.ranked.size(), static_cast<std::size_t>(k));
                                for (std::size_t i = 0; i < limit; ++i) {
                                    if (gold.count(result.ranked[i].page_id) > 0) {
                                        return 1.0 / static_cast<double>(i + 1);
                                    }
                                }
                                return 0.0;
                            });
}

void save_index(const PageIndex& index, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write index file: " + path);
    }
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, static_cast<std::uint32_t>(index.dim));
    write_u32(out, static_cast<std::uint32_t>(index.entries.size()));
    for (const auto& [page_id, matrix] : index.entries) {
        if (page_id.size() > 0xffff) {
            throw FormatError("page id longer than 65535 bytes: " + page_id);
        }
        write_u16(out, static_cast<std::uint16_t>(page_id.size()));
        out.write(page_id.data(), static_cast<std::streamsize>(page_id.size()));
        write_u32(out, static_cast<std::uint32_t>(matrix.rows));
        for (float value : matrix.data) {
            write_u32(out, std::bit_cast<std::uint32_t>(value));
        }
    }
    if (!out) {
        throw IoError("write failed: " + path);
    }
}

PageIndex load_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open index file: " + path);
    }
    char magic[6];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("bad index magic: " + path);
    }
    PageIndex index;
    index.dim = read_u32(in);
    const std::uint32_t pages = read_u32(in);
    std::set<std::string> seen;
    for (std::uint32_t p = 0; p < pages; ++p) {
        const std::uint16_t id_len = read_u16(in);
        std::string page_id(id_len, '\0');
        in.read(page_id.data(), id_len);
        if (!in) {
            throw FormatError("index file truncated");
        }
        if (!seen.insert(page_id).second) {
            throw FormatError("duplicate page id in index: " + page_id);
        }
        EmbeddingMatrix matrix;
        matrix.rows = read_u32(in);
        matrix.dim = index.dim;
        matrix.data.resize(matrix.rows * matrix.dim);
        for (float& value : matrix.data) {
            value = std::bit_cast<float>(read_u32(in));
        }
        index.entries.emplace_back(std::move(page_id), std::move(matrix));
    }
    index.metadata = path;
    return index;
}

PageIndex build_index_from_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open embeddings file: " + path);
    }
    PageIndex index;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) {
            continue;
        }
        const std::string context = path + ":" + std::to_string(line_number);
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded() || !doc.is_object()) {
            throw SchemaError(context + ": invalid JSON");
        }
        if (!doc.contains("page_id") || !doc["page_id"].is_string()) {
            throw SchemaError(context + ": missing page_id");
        }
        const auto page_id = doc["page_id"].get<std::string>();
        if (!seen.insert(page_id).second) {
            throw SchemaError(context + ": duplicate page_id '" + page_id + "'");
        }
        EmbeddingMatrix matrix = matrix_from_json(doc, context);
        if (index.entries.empty()) {
            index.dim = matrix.dim;
        } else if (matrix.dim != index.dim) {
            throw DimensionMismatch(context + ": dim " + std::to_string(matrix.dim) +
                                    " != index dim " + std::to_string(index.dim));
        }
        index.entries.emplace_back(page_id, std::move(matrix));
    }
    index.metadata = path;
    return index;
}

std::vector<std::pair<std::string, EmbeddingMatrix>> load_embeddings_jsonl(
    const std::string& path, const std::string& id_key) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open embeddings file: " + path);
    }
    std::vector<std::pair<std::string, EmbeddingMatrix>> out;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) {
            continue;
        }
        const std::string context = path + ":" + std::to_string(line_number);
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded() || !doc.is_object()) {
            throw SchemaError(context + ": invalid JSON");
        }
        if (!doc.contains(id_key) || !doc[id_key].is_string()) {
            throw SchemaError(context + ": missing " + id_key);
        }
        out.emplace_back(doc[id_key].get<std::string>(), matrix_from_json(doc, context));
    }
    return out;
}

}  // namespace lf
