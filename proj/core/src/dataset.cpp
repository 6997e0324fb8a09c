#include "selans/dataset.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace selans::dataset {
namespace {

using json = nlohmann::json;

#include "unicode_tables.inc"

bool in_ranges(char32_t cp, const CpRange* ranges, std::size_t n) {
    std::size_t lo = 0, hi = n;
    while (lo < hi) {
        std::size_t mid = (lo + hi) / 2;
        if (cp > ranges[mid].hi)
            lo = mid + 1;
        else if (cp < ranges[mid].lo)
            hi = mid;
        else
            return true;
    }
    return false;
}

char32_t to_lower_cp(char32_t cp) {
    if (cp < 128) {
        if (cp >= U'A' && cp <= U'Z') return cp + 32;
        return cp;
    }
    std::size_t lo = 0, hi = std::size(kLowerDelta);
    while (lo < hi) {
        std::size_t mid = (lo + hi) / 2;
        if (kLowerDelta[mid].from < cp)
            lo = mid + 1;
        else if (kLowerDelta[mid].from > cp)
            hi = mid;
        else
            return kLowerDelta[mid].to;
    }
    return cp;
}

bool is_punct_or_symbol(char32_t cp) {
    if (cp < 128) {
        return (cp >= '!' && cp <= '/') || (cp >= ':' && cp <= '@') ||
               (cp >= '[' && cp <= '`') || (cp >= '{' && cp <= '~');
    }
    return in_ranges(cp, kPunctSymbolRanges, std::size(kPunctSymbolRanges));
}

bool is_space_cp(char32_t cp) {
    if (cp < 128) return cp == ' ' || (cp >= 0x09 && cp <= 0x0D);
    return in_ranges(cp, kSpaceRanges, std::size(kSpaceRanges));
}

// Decodes one UTF-8 code point at s[i]; on malformed input returns the raw
// byte so unknown bytes pass through the normalizer untouched.
char32_t decode_utf8(const std::string& s, std::size_t& i) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) {
        ++i;
        return c;
    }
    int extra = 0;
    char32_t cp = 0;
    if ((c & 0xE0) == 0xC0) { extra = 1; cp = c & 0x1F; }
    else if ((c & 0xF0) == 0xE0) { extra = 2; cp = c & 0x0F; }
    else if ((c & 0xF8) == 0xF0) { extra = 3; cp = c & 0x07; }
    else { ++i; return c; }
    if (i + extra >= s.size()) { ++i; return c; }
    for (int k = 1; k <= extra; ++k) {
        unsigned char cc = static_cast<unsigned char>(s[i + k]);
        if ((cc & 0xC0) != 0x80) { ++i; return c; }
        cp = (cp << 6) | (cc & 0x3F);
    }
    i += extra + 1;
    return cp;
}

void encode_utf8(char32_t cp, std::string& out) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n\v\f");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n\v\f");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) {
            lines.push_back(text.substr(pos));
            break;
        }
        std::string line = text.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
        pos = nl + 1;
    }
    if (!lines.empty() && lines.back().empty()) lines.pop_back();
    return lines;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileUnreadable(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw FileUnreadable(path);
    return ss.str();
}

// RFC 4180-ish field splitter, separator configurable so it serves both the
// tab-separated and comma-separated paths.
std::vector<std::string> split_delimited(const std::string& line, char sep, std::size_t row) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"' && cur.empty()) {
            quoted = true;
        } else if (c == sep) {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (quoted) throw MalformedRow(row, "unterminated quoted field");
    fields.push_back(std::move(cur));
    return fields;
}

std::vector<std::string> parse_reference_list(const std::string& raw, std::size_t row) {
    json parsed;
    try {
        parsed = json::parse(raw);
    } catch (const json::exception&) {
        throw MalformedRow(row, "reference list is not a JSON array: " + raw);
    }
    if (!parsed.is_array()) throw MalformedRow(row, "reference list is not an array");
    std::vector<std::string> refs;
    for (const auto& item : parsed) {
        if (!item.is_string()) throw MalformedRow(row, "reference entry is not a string");
        refs.push_back(item.get<std::string>());
    }
    return refs;
}

void validate_record(QuestionRecord& rec, std::size_t row) {
    if (trim(rec.question).empty()) throw MalformedRow(row, "empty question");
    if (rec.references.empty()) throw MalformedRow(row, "empty reference list");
    for (auto& ref : rec.references) {
        if (trim(ref).empty()) throw MalformedRow(row, "blank reference entry");
        // References that vanish under normalization would match everything
        // via the substring rule, so they are rejected up front.
        if (normalize_answer(ref).empty())
            throw MalformedRow(row, "reference normalizes to empty: " + ref);
    }
    if (rec.popularity && *rec.popularity < 0.0)
        throw MalformedRow(row, "negative popularity");
}

int find_column(const std::vector<std::string>& header,
                std::initializer_list<const char*> names) {
    for (const char* name : names) {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (trim(header[i]) == name) return static_cast<int>(i);
        }
    }
    return -1;
}

QuestionSet ingest_delimited(const std::string& path, char sep) {
    const std::string text = read_file(path);
    const auto lines = split_lines(text);
    if (lines.empty()) throw MalformedRow(0, "file has no header row");

    const auto header = split_delimited(lines[0], sep, 0);
    const int q_col = find_column(header, {"question"});
    const int ref_col = find_column(header, {"possible_answers", "references"});
    const int pop_col = find_column(header, {"o_pop", "popularity"});
    const int id_col = find_column(header, {"id"});
    if (q_col < 0) throw MalformedRow(0, "missing 'question' column");
    if (ref_col < 0) throw MalformedRow(0, "missing 'possible_answers' column");

    QuestionSet set;
    set.source = path;
    std::unordered_set<std::string> seen;
    for (std::size_t row = 1; row < lines.size(); ++row) {
        if (trim(lines[row]).empty()) continue;
        const auto fields = split_delimited(lines[row], sep, row);
        auto field = [&](int col) -> std::string {
            return col >= 0 && static_cast<std::size_t>(col) < fields.size()
                       ? fields[static_cast<std::size_t>(col)]
                       : std::string{};
        };

        QuestionRecord rec;
        rec.id = id_col >= 0 && !trim(field(id_col)).empty() ? trim(field(id_col))
                                                             : "row-" + std::to_string(row);
        rec.question = trim(field(q_col));
        rec.references = parse_reference_list(trim(field(ref_col)), row);
        if (pop_col >= 0) {
            const std::string pop = trim(field(pop_col));
            if (!pop.empty()) {
                try {
                    rec.popularity = std::stod(pop);
                } catch (const std::exception&) {
                    throw MalformedRow(row, "unparseable popularity: " + pop);
                }
            }
        }
        validate_record(rec, row);
        if (!seen.insert(rec.id).second) throw DuplicateId(rec.id);
        set.records.push_back(std::move(rec));
    }
    return set;
}

QuestionRecord record_from_json(const json& obj, std::size_t row) {
    if (!obj.is_object()) throw MalformedRow(row, "line is not a JSON object");
    QuestionRecord rec;
    rec.id = obj.contains("id")
                 ? (obj["id"].is_string() ? obj["id"].get<std::string>() : obj["id"].dump())
                 : "row-" + std::to_string(row);
    rec.question = obj.value("question", std::string{});
    const char* ref_key = obj.contains("references") ? "references" : "possible_answers";
    if (obj.contains(ref_key) && obj[ref_key].is_array()) {
        for (const auto& item : obj[ref_key]) {
            if (!item.is_string()) throw MalformedRow(row, "reference entry is not a string");
            rec.references.push_back(item.get<std::string>());
        }
    }
    for (const char* key : {"popularity", "o_pop"}) {
        if (obj.contains(key) && obj[key].is_number())
            rec.popularity = obj[key].get<double>();
    }
    if (obj.contains("tags") && obj["tags"].is_array()) {
        for (const auto& t : obj["tags"]) rec.tags.push_back(t.get<std::string>());
    }
    validate_record(rec, row);
    return rec;
}

QuestionSet ingest_jsonl(const std::string& path) {
    const std::string text = read_file(path);
    const auto lines = split_lines(text);
    QuestionSet set;
    set.source = path;
    std::unordered_set<std::string> seen;
    for (std::size_t row = 0; row < lines.size(); ++row) {
        if (trim(lines[row]).empty()) continue;
        json obj;
        try {
            obj = json::parse(lines[row]);
        } catch (const json::exception& e) {
            throw MalformedRow(row + 1, std::string("invalid JSON: ") + e.what());
        }
        QuestionRecord rec = record_from_json(obj, row + 1);
        if (!seen.insert(rec.id).second) throw DuplicateId(rec.id);
        set.records.push_back(std::move(rec));
    }
    return set;
}

} // namespace

const QuestionRecord* QuestionSet::find(const std::string& id) const {
    for (const auto& rec : records) {
        if (rec.id == id) return &rec;
    }
    return nullptr;
}

QuestionSet ingest_dataset(const std::string& path, DatasetFormat format) {
    switch (format) {
    case DatasetFormat::PopqaTsv: return ingest_delimited(path, '\t');
    case DatasetFormat::Csv: return ingest_delimited(path, ',');
    case DatasetFormat::Jsonl: return ingest_jsonl(path);
    }
    throw ConfigError("unknown dataset format");
}

std::string dump_jsonl(const QuestionSet& set) {
    std::string out;
    for (const auto& rec : set.records) {
        json obj;
        obj["id"] = rec.id;
        obj["question"] = rec.question;
        obj["references"] = rec.references;
        if (rec.popularity) obj["popularity"] = *rec.popularity;
        if (!rec.tags.empty()) obj["tags"] = rec.tags;
        out += obj.dump();
        out += '\n';
    }
    return out;
}

void dump_jsonl_file(const QuestionSet& set, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileUnreadable(path);
    out << dump_jsonl(set);
}

QuestionSet load_canonical_jsonl(const std::string& path) {
    return ingest_dataset(path, DatasetFormat::Jsonl);
}

std::string normalize_answer(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    std::size_t i = 0;
    while (i < text.size()) {
        char32_t cp = decode_utf8(text, i);
        if (is_space_cp(cp)) {
            pending_space = true;
            continue;
        }
        if (is_punct_or_symbol(cp)) continue;
        if (pending_space && !out.empty()) out.push_back(' ');
        pending_space = false;
        encode_utf8(to_lower_cp(cp), out);
    }
    return out;
}

bool match_answer(const std::string& prediction, const std::vector<std::string>& references) {
    if (references.empty()) throw EmptyReferences();
    const std::string pred = normalize_answer(prediction);
    if (pred.empty()) return false;
    for (const auto& ref_raw : references) {
        const std::string ref = normalize_answer(ref_raw);
        if (ref.empty()) continue;
        if (pred.find(ref) != std::string::npos || ref.find(pred) != std::string::npos)
            return true;
    }
    return false;
}

TercilePartition popularity_terciles(const QuestionSet& set) {
    for (const auto& rec : set.records) {
        if (!rec.popularity) throw MissingPopularity(rec.id);
    }
    std::vector<std::size_t> order(set.records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return *set.records[a].popularity > *set.records[b].popularity;
    });

    const std::size_t n = order.size();
    const std::size_t n_common = (n + 2) / 3;
    const std::size_t n_rare = (n + 1) / 3;

    TercilePartition part;
    for (std::size_t i = 0; i < n; ++i) {
        const QuestionRecord& rec = set.records[order[i]];
        if (i < n_common)
            part.common.push_back(rec);
        else if (i < n - n_rare)
            part.middle.push_back(rec);
        else
            part.rare.push_back(rec);
    }
    return part;
}

} // namespace selans::dataset
