#pragma once

#include <optional>
#include <string>
#include <vector>

#include "selans/errors.hpp"

namespace selans::dataset {

class DatasetError : public DataError {
public:
    using DataError::DataError;
};

class FileUnreadable : public DatasetError {
public:
    explicit FileUnreadable(const std::string& path)
        : DatasetError("cannot read file: " + path) {}
};

class MalformedRow : public DatasetError {
public:
    MalformedRow(std::size_t row, const std::string& reason)
        : DatasetError("row " + std::to_string(row) + ": " + reason), row(row) {}
    std::size_t row;
};

class DuplicateId : public DatasetError {
public:
    explicit DuplicateId(const std::string& id)
        : DatasetError("duplicate question id: " + id) {}
};

class MissingPopularity : public DatasetError {
public:
    explicit MissingPopularity(const std::string& id)
        : DatasetError("record has no popularity value: " + id) {}
};

class EmptyReferences : public DatasetError {
public:
    EmptyReferences() : DatasetError("reference list is empty") {}
};

/// One factual question with its reference answers.
struct QuestionRecord {
    std::string id;
    std::string question;
    std::vector<std::string> references; // nonempty, entries nonempty after trimming
    std::optional<double> popularity;    // monthly pageview proxy, >= 0
    std::vector<std::string> tags;
};

/// Immutable ordered collection of records; ids are unique.
struct QuestionSet {
    std::vector<QuestionRecord> records;
    std::string source;

    const QuestionRecord* find(const std::string& id) const;
};

enum class DatasetFormat { PopqaTsv, Jsonl, Csv };

QuestionSet ingest_dataset(const std::string& path, DatasetFormat format);

/// Canonical JSONL dump (one record per line, keys id/question/references/
/// popularity/tags).
std::string dump_jsonl(const QuestionSet& set);
void dump_jsonl_file(const QuestionSet& set, const std::string& path);
QuestionSet load_canonical_jsonl(const std::string& path);

/// Lowercases, strips punctuation and symbol characters, trims, and collapses
/// internal whitespace runs to single spaces. Empty input yields empty output.
std::string normalize_answer(const std::string& text);

/// True iff the normalized prediction is a substring of some normalized
/// reference or vice versa. An empty normalized prediction never matches.
bool match_answer(const std::string& prediction, const std::vector<std::string>& references);

/// Popularity split: records sorted by popularity descending, top third
/// common and bottom third rare. Cell sizes are ceil(N/3) / rest /
/// floor((N+1)/3) so they differ by at most one; ties keep input order.
struct TercilePartition {
    std::vector<QuestionRecord> common;
    std::vector<QuestionRecord> middle;
    std::vector<QuestionRecord> rare;
};

TercilePartition popularity_terciles(const QuestionSet& set);

} // namespace selans::dataset
