#pragma once

// Augmented textual prompts: a template bank expanded over subject metadata
// and per-emotion phrase tables, plus the hashed word tokenizer used by the
// text encoder.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "affectvlm/default_prompt_bank.hpp"
#include "binary_io.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace avlm {

// Metadata as seen by the prompt engine; any field may be unknown.
struct PromptMeta {
    std::optional<AgeGroup> age_group;
    std::optional<Gender> gender;
    std::optional<Ethnicity> ethnicity;

    static PromptMeta from(const SubjectMeta& m) { return {m.age_group, m.gender, m.ethnicity}; }
    friend bool operator==(const PromptMeta&, const PromptMeta&) = default;
};

enum class Slot : std::uint8_t { age_adj, ethnicity, ethnicity_lower, gender_noun, emotion_phrase };

struct PromptTemplate {
    int id = 0;
    std::optional<Emotion> emotion;  // nullopt: applies to every emotion
    std::string phrase_form;         // empty: no {emotion_phrase} slot
    std::string text;
    std::vector<Slot> slots;
};

struct PromptBank {
    std::vector<PromptTemplate> templates;
    // phrases[emotion][form] -> variants, in file order
    std::array<std::map<std::string, std::vector<std::string>>, kNumEmotions> phrases;

    const std::vector<std::string>& phrase_variants(Emotion e, const std::string& form) const {
        static const std::vector<std::string> none;
        const auto& table = phrases[static_cast<std::size_t>(e)];
        const auto it = table.find(form);
        return it == table.end() ? none : it->second;
    }
};

namespace prompts_detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline Slot parse_slot(const std::string& name, int line) {
    if (name == "age_adj") return Slot::age_adj;
    if (name == "ethnicity") return Slot::ethnicity;
    if (name == "ethnicity|lower") return Slot::ethnicity_lower;
    if (name == "gender_noun") return Slot::gender_noun;
    if (name == "emotion_phrase") return Slot::emotion_phrase;
    throw InvalidInput("prompt bank line " + std::to_string(line) + ": unknown slot {" + name + "}");
}

inline std::string slot_key(Slot s) { return s == Slot::ethnicity_lower ? "ethnicity" : std::to_string(int(s)); }

inline std::vector<Slot> scan_slots(const std::string& text, int line) {
    std::vector<Slot> slots;
    std::set<std::string> seen;
    std::size_t pos = 0;
    while ((pos = text.find('{', pos)) != std::string::npos) {
        const auto end = text.find('}', pos);
        if (end == std::string::npos)
            throw InvalidInput("prompt bank line " + std::to_string(line) + ": unterminated slot");
        const Slot s = parse_slot(text.substr(pos + 1, end - pos - 1), line);
        if (!seen.insert(slot_key(s)).second)
            throw InvalidInput("prompt bank line " + std::to_string(line) + ": slot used more than once");
        slots.push_back(s);
        pos = end + 1;
    }
    return slots;
}

inline bool starts_with_vowel(std::string_view w) {
    if (w.empty()) return false;
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(w.front())));
    return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

// Single spaces between words; "a" -> "an" before a vowel.
inline std::string finish(const std::string& raw) {
    std::istringstream in(raw);
    std::vector<std::string> words;
    for (std::string w; in >> w;) words.push_back(w);
    for (std::size_t i = 0; i + 1 < words.size(); ++i)
        if ((words[i] == "a" || words[i] == "A") && starts_with_vowel(words[i + 1])) words[i] += 'n';
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

inline std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace prompts_detail

inline PromptBank parse_prompt_bank(std::string_view text) {
    using namespace prompts_detail;
    PromptBank bank;
    std::istringstream in{std::string(text)};
    int line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto sep = t.find("::");
        if (sep == std::string::npos)
            throw InvalidInput("prompt bank line " + std::to_string(line_no) + ": missing '::'");
        std::istringstream head(t.substr(0, sep));
        const std::string body = trim(std::string_view(t).substr(sep + 2));
        std::string kind;
        head >> kind;
        if (kind == "template") {
            PromptTemplate tpl;
            std::string emotion, form;
            if (!(head >> tpl.id >> emotion >> form))
                throw InvalidInput("prompt bank line " + std::to_string(line_no) + ": malformed template header");
            if (emotion != "*") tpl.emotion = parse_emotion(emotion);
            if (form != "-") tpl.phrase_form = form;
            tpl.text = body;
            tpl.slots = scan_slots(body, line_no);
            const bool has_phrase =
                std::find(tpl.slots.begin(), tpl.slots.end(), Slot::emotion_phrase) != tpl.slots.end();
            if (has_phrase == tpl.phrase_form.empty())
                throw InvalidInput("prompt bank line " + std::to_string(line_no) +
                                   ": phrase form and {emotion_phrase} slot must go together");
            if (!has_phrase && !tpl.emotion)
                throw InvalidInput("prompt bank line " + std::to_string(line_no) +
                                   ": template without {emotion_phrase} must name its emotion");
            bank.templates.push_back(std::move(tpl));
        } else if (kind == "phrase") {
            std::string emotion, form;
            if (!(head >> emotion >> form) || body.empty())
                throw InvalidInput("prompt bank line " + std::to_string(line_no) + ": malformed phrase line");
            bank.phrases[static_cast<std::size_t>(parse_emotion(emotion))][form].push_back(body);
        } else {
            throw InvalidInput("prompt bank line " + std::to_string(line_no) + ": unknown entry '" + kind + "'");
        }
    }
    return bank;
}

inline const PromptBank& default_prompt_bank() {
    static const PromptBank bank = parse_prompt_bank(kDefaultPromptBank);
    return bank;
}

inline PromptBank load_prompt_bank(const std::filesystem::path& path) { return parse_prompt_bank(io::read_text(path)); }

inline std::string_view gender_noun(Gender g, std::size_t variant) {
    constexpr std::array<std::array<std::string_view, 2>, 2> nouns{{{"woman", "female"}, {"man", "male"}}};
    return nouns[static_cast<std::size_t>(g)][variant];
}
inline constexpr std::size_t kGenderNounVariants = 2;

inline bool template_applies(const PromptTemplate& tpl, Emotion e, const PromptMeta& meta) {
    if (tpl.emotion && *tpl.emotion != e) return false;
    for (Slot s : tpl.slots) {
        if (s == Slot::age_adj && !meta.age_group) return false;
        if ((s == Slot::ethnicity || s == Slot::ethnicity_lower) && !meta.ethnicity) return false;
        if (s == Slot::gender_noun && !meta.gender) return false;
    }
    return true;
}

inline bool uses_slot(const PromptTemplate& tpl, Slot s) {
    return std::find(tpl.slots.begin(), tpl.slots.end(), s) != tpl.slots.end();
}

// Renders one template. Returns nullopt when the template does not apply
// or a variant index is out of range.
inline std::optional<std::string> render(const PromptBank& bank, const PromptTemplate& tpl, Emotion e,
                                         const PromptMeta& meta, std::size_t phrase_variant = 0,
                                         std::size_t gender_variant = 0) {
    if (!template_applies(tpl, e, meta) || gender_variant >= kGenderNounVariants) return std::nullopt;
    std::string phrase;
    if (!tpl.phrase_form.empty()) {
        const auto& variants = bank.phrase_variants(e, tpl.phrase_form);
        if (phrase_variant >= variants.size()) return std::nullopt;
        phrase = variants[phrase_variant];
    } else if (phrase_variant != 0) {
        return std::nullopt;
    }
    std::string out;
    const std::string& text = tpl.text;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto open = text.find('{', pos);
        if (open == std::string::npos) {
            out += text.substr(pos);
            break;
        }
        out += text.substr(pos, open - pos);
        const auto close = text.find('}', open);
        const auto name = text.substr(open + 1, close - open - 1);
        if (name == "age_adj") out += to_string(*meta.age_group);
        else if (name == "ethnicity") out += to_string(*meta.ethnicity);
        else if (name == "ethnicity|lower") out += prompts_detail::lower(std::string(to_string(*meta.ethnicity)));
        else if (name == "gender_noun") out += gender_noun(*meta.gender, gender_variant);
        else if (name == "emotion_phrase") out += phrase;
        pos = close + 1;
    }
    return prompts_detail::finish(out);
}

inline const PromptTemplate* find_template(const PromptBank& bank, int id, Emotion e) {
    for (const auto& tpl : bank.templates)
        if (tpl.id == id && (!tpl.emotion || *tpl.emotion == e)) return &tpl;
    return nullptr;
}

inline std::optional<std::string> render(const PromptBank& bank, int template_id, Emotion e, const PromptMeta& meta,
                                         std::size_t phrase_variant = 0, std::size_t gender_variant = 0) {
    const auto* tpl = find_template(bank, template_id, e);
    if (!tpl) return std::nullopt;
    return render(bank, *tpl, e, meta, phrase_variant, gender_variant);
}

// Every distinct prompt the bank can produce for (emotion, meta), in bank
// order: template, then phrase variant, then gender-noun variant.
inline std::vector<std::string> all_prompts(const PromptBank& bank, Emotion e, const PromptMeta& meta) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& tpl : bank.templates) {
        if (!template_applies(tpl, e, meta)) continue;
        const std::size_t n_phrase = tpl.phrase_form.empty() ? 1 : bank.phrase_variants(e, tpl.phrase_form).size();
        const std::size_t n_gender = uses_slot(tpl, Slot::gender_noun) ? kGenderNounVariants : 1;
        for (std::size_t p = 0; p < n_phrase; ++p)
            for (std::size_t g = 0; g < n_gender; ++g)
                if (auto s = render(bank, tpl, e, meta, p, g); s && seen.insert(*s).second) out.push_back(*s);
    }
    return out;
}

struct ExpandResult {
    std::vector<std::string> prompts;
    bool truncated = false;  // fewer distinct prompts exist than requested
};

// n distinct prompts: the first n of a seeded permutation of all_prompts.
inline ExpandResult expand(const PromptBank& bank, Emotion e, const PromptMeta& meta, std::size_t n,
                           std::uint64_t seed) {
    if (n < 1) throw InvalidInput("expand: n must be >= 1");
    auto all = all_prompts(bank, e, meta);
    Rng rng{seed, static_cast<std::uint64_t>(e), meta.age_group ? 1u + unsigned(*meta.age_group) : 0u,
            meta.gender ? 1u + unsigned(*meta.gender) : 0u, meta.ethnicity ? 1u + unsigned(*meta.ethnicity) : 0u};
    rng.shuffle(std::span<std::string>(all));
    ExpandResult res;
    res.truncated = all.size() < n;
    all.resize(std::min(n, all.size()));
    res.prompts = std::move(all);
    return res;
}

inline ExpandResult expand(Emotion e, const SubjectMeta& meta, std::size_t n, std::uint64_t seed) {
    return expand(default_prompt_bank(), e, PromptMeta::from(meta), n, seed);
}

// Metadata cross-product in iteration order: ethnicity outermost (unknown
// first), then age group, then gender fastest. Consecutive entries
// therefore alternate gender and every six entries cover all age groups.
inline std::vector<PromptMeta> metadata_cross_product() {
    std::vector<PromptMeta> out;
    std::vector<std::optional<Ethnicity>> eths{std::nullopt};
    for (auto e : kAllEthnicities) eths.emplace_back(e);
    for (const auto& eth : eths)
        for (auto a : kAllAgeGroups)
            for (auto g : kAllGenders) out.push_back({a, g, eth});
    return out;
}

struct ClassPrompt {
    std::string text;
    PromptMeta meta;
};

// Balanced class prompt set: walks the metadata cross-product and takes,
// for each combination, the first not-yet-used prompt of its seeded
// expansion.
inline std::vector<ClassPrompt> class_prompt_set(const PromptBank& bank, Emotion e, std::size_t n_per_class,
                                                 std::uint64_t seed) {
    const auto combos = metadata_cross_product();
    std::vector<std::vector<std::string>> lists;
    for (const auto& m : combos) lists.push_back(expand(bank, e, m, 1000, seed).prompts);
    std::vector<ClassPrompt> out;
    std::set<std::string> used;
    std::vector<std::size_t> cursor(combos.size(), 0);
    bool added = true;
    while (out.size() < n_per_class && added) {
        added = false;
        for (std::size_t c = 0; c < combos.size() && out.size() < n_per_class; ++c) {
            auto& list = lists[c];
            while (cursor[c] < list.size() && used.count(list[cursor[c]])) ++cursor[c];
            if (cursor[c] == list.size()) continue;
            used.insert(list[cursor[c]]);
            out.push_back({list[cursor[c]], combos[c]});
            ++cursor[c];
            added = true;
        }
    }
    return out;
}

inline std::vector<ClassPrompt> class_prompt_set(Emotion e, std::size_t n_per_class, std::uint64_t seed) {
    return class_prompt_set(default_prompt_bank(), e, n_per_class, seed);
}

// ---------------------------------------------------------------------------
// Tokenizer: lowercase, drop ASCII punctuation, split on whitespace, and
// hash each word with 64-bit FNV-1a into one of kVocabSize buckets.

inline constexpr std::uint32_t kVocabSize = 4096;

using TokenSeq = std::vector<std::uint32_t>;

inline std::uint32_t token_id(std::string_view word) {
    const auto h = io::fnv1a64({reinterpret_cast<const unsigned char*>(word.data()), word.size()});
    return static_cast<std::uint32_t>(h % kVocabSize);
}

inline std::vector<std::string> words_of(std::string_view prompt) {
    std::string clean;
    clean.reserve(prompt.size());
    for (char ch : prompt) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::ispunct(c)) continue;
        clean += static_cast<char>(std::tolower(c));
    }
    std::istringstream in(clean);
    std::vector<std::string> words;
    for (std::string w; in >> w;) words.push_back(w);
    return words;
}

inline TokenSeq tokenize(std::string_view prompt) {
    const auto words = words_of(prompt);
    if (words.empty()) throw InvalidInput("tokenize: empty prompt");
    TokenSeq seq;
    seq.reserve(words.size());
    for (const auto& w : words) seq.push_back(token_id(w));
    return seq;
}

}  // namespace avlm
