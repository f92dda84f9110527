#include "svtc/datagen/question.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>

#include "svtc/common/error.hpp"
#include "svtc/common/seed.hpp"

namespace svtc {

using ojson = nlohmann::ordered_json;

bool Predicate::matches(const SceneObject& o) const {
    if (shape && o.shape != *shape) return false;
    if (color && o.color != *color) return false;
    if (size && o.size != *size) return false;
    if (exclude_color && o.color == *exclude_color) return false;
    return true;
}

ojson predicate_to_json(const Predicate& p, const Vocabulary& vocab) {
    ojson j;
    j["shape"] = p.shape ? ojson(vocab.shape(*p.shape).id) : ojson(nullptr);
    j["color"] = p.color ? ojson(vocab.color(*p.color).id) : ojson(nullptr);
    j["size"] = p.size ? ojson(to_string(*p.size)) : ojson(nullptr);
    j["exclude_color"] = p.exclude_color ? ojson(vocab.color(*p.exclude_color).id) : ojson(nullptr);
    return j;
}

namespace {

std::string noun_phrase(const Predicate& p, const Vocabulary& vocab, bool plural) {
    std::string s;
    if (p.size) s += std::string(to_string(*p.size)) + " ";
    if (p.color) s += vocab.color(*p.color).name + " ";
    const std::string noun = p.shape ? vocab.shape(*p.shape).display_name : "object";
    s += plural ? pluralize(noun) : noun;
    if (p.exclude_color) {
        s += plural ? " that are not " : " that is not ";
        s += vocab.color(*p.exclude_color).name;
    }
    return s;
}

std::string with_article(const std::string& phrase) {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(phrase.front())));
    const bool vowel = c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
    return (vowel ? "an " : "a ") + phrase;
}

} // namespace

std::string describe_plural(const Predicate& p, const Vocabulary& vocab) { return noun_phrase(p, vocab, true); }

std::string describe_singular(const Predicate& p, const Vocabulary& vocab, bool article) {
    const auto s = noun_phrase(p, vocab, false);
    return article ? with_article(s) : s;
}

std::string number_word(int n) {
    static constexpr std::array<const char*, 13> kWords = {"zero", "one", "two",   "three", "four",
                                                           "five", "six", "seven", "eight", "nine",
                                                           "ten",  "eleven", "twelve"};
    if (n < 0 || n > 12) return std::to_string(n);
    return kWords[static_cast<size_t>(n)];
}

const std::vector<std::string>& template_names(TaskType task) {
    static const std::array<std::vector<std::string>, kNumTaskTypes> kNames = {{
        {"how_many", "number_of"},
        {"more", "at_least", "fewer"},
        {"left_of", "right_of", "above", "below", "directly_above"},
        {"fill_position", "which_color"},
        {"is_there", "do_you_see"},
        {"same_color", "same_size", "more_than", "at_most", "at_least"},
        {"not_color", "every_either", "neither_nor"},
    }};
    return kNames[static_cast<size_t>(index_of(task))];
}

ojson example_to_json(const QAExample& e, const Vocabulary& vocab) {
    ojson j;
    j["id"] = e.id;
    j["image"] = e.image;
    j["question"] = e.question;
    j["options"] = ojson::array();
    for (size_t i = 0; i < e.options.size(); ++i) {
        j["options"].push_back(std::string(1, option_letter(static_cast<int>(i))) + ". " + e.options[i]);
    }
    j["answer"] = std::string(1, e.answer_letter());
    j["task_type"] = to_string(e.task);
    j["difficulty"] = to_string(e.difficulty);
    ojson meta;
    meta["scene"] = scene_to_json(e.scene, vocab);
    meta["query"] = e.query;
    j["metadata"] = std::move(meta);
    return j;
}

QAExample example_from_json(const nlohmann::json& j, const Vocabulary& vocab) {
    QAExample e;
    const char* field = "id";
    try {
        e.id = j.at("id").get<std::string>();
        field = "image";
        e.image = j.at("image").get<std::string>();
        field = "question";
        e.question = j.at("question").get<std::string>();
        field = "options";
        for (const auto& o : j.at("options")) {
            const auto s = o.get<std::string>();
            if (s.size() < 3 || s[1] != '.' || s[2] != ' ') throw ValidationError("bad option '" + s + "'");
            e.options.push_back(s.substr(3));
        }
        field = "answer";
        const auto a = j.at("answer").get<std::string>();
        if (a.size() != 1) throw ValidationError("answer must be a single letter");
        e.answer = option_index(a[0]);
        field = "task_type";
        e.task = parse_task_type(j.at("task_type").get<std::string>());
        field = "difficulty";
        e.difficulty = parse_difficulty(j.at("difficulty").get<std::string>());
        field = "metadata.scene";
        const auto& s = j.at("metadata").at("scene");
        e.scene.seed = s.at("seed").get<std::uint64_t>();
        for (const auto& o : s.at("objects")) {
            SceneObject so;
            so.shape = vocab.shape_index(o.at("shape").get<std::string>());
            so.color = vocab.color_index(o.at("color").get<std::string>());
            so.size = parse_object_size(o.at("size").get<std::string>());
            so.cell = {o.at("cell").at(0).get<int>(), o.at("cell").at(1).get<int>()};
            e.scene.objects.push_back(so);
        }
        if (!s.at("panel").is_null()) {
            const auto& p = s.at("panel");
            PatternPanel panel;
            panel.rule = parse_pattern_rule(p.at("rule").get<std::string>());
            panel.masked_row = p.at("masked_cell").at(0).get<int>();
            panel.masked_col = p.at("masked_cell").at(1).get<int>();
            for (int r = 0; r < 3; ++r) {
                for (int c = 0; c < 3; ++c) {
                    const auto& v = p.at("grid").at(r).at(c);
                    panel.grid[r][c] = v.is_null() ? -1 : vocab.color_index(v.get<std::string>());
                }
            }
            // The masked tile's color is the answer text.
            if (e.answer >= 0 && e.answer < static_cast<int>(e.options.size())) {
                for (int i = 0; i < Vocabulary::kNumColors; ++i) {
                    if (vocab.color(i).name == e.options[static_cast<size_t>(e.answer)]) {
                        panel.grid[panel.masked_row][panel.masked_col] = i;
                    }
                }
            }
            e.scene.panel = panel;
        }
        field = "metadata.query";
        e.query = j.at("metadata").at("query");
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError(std::string("field '") + field + "': " + ex.what());
    } catch (const ValidationError& ex) {
        throw ValidationError(std::string("field '") + field + "': " + ex.what());
    }
    return e;
}

namespace {

const std::vector<std::string> kYesNo = {"yes", "no"};

int yes_no(bool v) { return v ? 0 : 1; }

class Builder {
public:
    Builder(const Scene& scene, Difficulty difficulty, Rng& rng, const Vocabulary& vocab)
        : scene_(scene), diff_(difficulty), rng_(rng), vocab_(vocab) {}

    const SceneObject& random_object() {
        return scene_.objects[static_cast<size_t>(uniform_int(rng_, 0, static_cast<int>(scene_.objects.size()) - 1))];
    }

    int random_color() { return uniform_int(rng_, 0, static_cast<int>(vocab_.colors().size()) - 1); }
    int random_shape() { return uniform_int(rng_, 0, static_cast<int>(vocab_.shapes().size()) - 1); }

    int random_color_except(int c) {
        int r = uniform_int(rng_, 0, static_cast<int>(vocab_.colors().size()) - 2);
        return r >= c ? r + 1 : r;
    }

    // Predicate whose richness grows with difficulty and which matches `o`.
    Predicate anchored(const SceneObject& o) {
        Predicate p;
        switch (diff_) {
        case Difficulty::easy:
            if (bernoulli(rng_, 0.5)) {
                p.shape = o.shape;
            } else {
                p.color = o.color;
            }
            break;
        case Difficulty::medium:
            p.shape = o.shape;
            p.color = o.color;
            break;
        case Difficulty::hard:
            p.shape = o.shape;
            if (bernoulli(rng_, 0.5)) {
                p.color = o.color;
                p.size = o.size;
            } else {
                p.exclude_color = random_color_except(o.color);
            }
            break;
        }
        return p;
    }

    // Same richness, drawn freely from the vocabulary.
    Predicate free_predicate() {
        SceneObject o;
        o.shape = random_shape();
        o.color = random_color();
        o.size = bernoulli(rng_, 0.5) ? ObjectSize::large : ObjectSize::small;
        return anchored(o);
    }

    int count(const Predicate& p) const {
        return static_cast<int>(std::count_if(scene_.objects.begin(), scene_.objects.end(),
                                              [&](const SceneObject& o) { return p.matches(o); }));
    }

    std::vector<int> matching(const Predicate& p) const {
        std::vector<int> out;
        for (size_t i = 0; i < scene_.objects.size(); ++i) {
            if (p.matches(scene_.objects[i])) out.push_back(static_cast<int>(i));
        }
        return out;
    }

    // Shortest description that singles out `o`, or nullopt.
    std::optional<Predicate> unique_description(const SceneObject& o) const {
        std::vector<Predicate> candidates;
        if (diff_ == Difficulty::easy) {
            candidates.push_back({.shape = o.shape});
            candidates.push_back({.color = o.color});
        }
        candidates.push_back({.shape = o.shape, .color = o.color});
        candidates.push_back({.shape = o.shape, .color = o.color, .size = o.size});
        for (const auto& c : candidates) {
            if (count(c) == 1) return c;
        }
        return std::nullopt;
    }

    const Scene& scene() const { return scene_; }
    Difficulty difficulty() const { return diff_; }
    Rng& rng() { return rng_; }
    const Vocabulary& vocab() const { return vocab_; }

private:
    const Scene& scene_;
    Difficulty diff_;
    Rng& rng_;
    const Vocabulary& vocab_;
};

bool relation_holds(const std::string& rel, const SceneObject& a, const SceneObject& b) {
    if (rel == "left_of") return a.cell.x < b.cell.x;
    if (rel == "right_of") return a.cell.x > b.cell.x;
    if (rel == "above") return a.cell.y < b.cell.y;
    if (rel == "below") return a.cell.y > b.cell.y;
    return a.cell.x == b.cell.x && a.cell.y < b.cell.y; // directly_above
}

struct Draft {
    std::string question;
    std::vector<std::string> options;
    int answer = 0;
    ojson query;
};

std::optional<Draft> counting(Builder& b, int tmpl, const std::string& name) {
    const Predicate p = b.anchored(b.random_object());
    Draft d;
    const auto desc = describe_plural(p, b.vocab());
    d.question = tmpl == 0 ? "How many " + desc + " are there?"
                           : "What is the number of " + desc + " in the picture?";
    for (int i = 0; i <= 12; ++i) d.options.push_back(std::to_string(i));
    d.answer = b.count(p);
    if (d.answer > 12) return std::nullopt;
    d.query = {{"template", name}, {"predicate", predicate_to_json(p, b.vocab())}};
    return d;
}

std::optional<Draft> comparison(Builder& b, int tmpl, const std::string& name) {
    const auto& oa = b.random_object();
    const auto& ob = b.random_object();
    if (&oa == &ob) return std::nullopt;
    const Predicate pa = b.anchored(oa);
    const Predicate pb = b.anchored(ob);
    // Comparing a set to itself is ill-posed.
    if (pa == pb || b.matching(pa) == b.matching(pb)) return std::nullopt;
    const int na = b.count(pa);
    const int nb = b.count(pb);
    const auto da = describe_plural(pa, b.vocab());
    const auto db = describe_plural(pb, b.vocab());
    Draft d;
    bool truth = false;
    if (tmpl == 0) {
        d.question = "Are there more " + da + " than " + db + "?";
        truth = na > nb;
    } else if (tmpl == 1) {
        d.question = "Do we have at least as many " + da + " as " + db + "?";
        truth = na >= nb;
    } else {
        d.question = "Are there fewer " + da + " than " + db + "?";
        truth = na < nb;
    }
    d.options = kYesNo;
    d.answer = yes_no(truth);
    d.query = {{"template", name},
               {"left", predicate_to_json(pa, b.vocab())},
               {"right", predicate_to_json(pb, b.vocab())}};
    return d;
}

struct Link {
    std::string relation;
    Predicate subject;
    std::string subject_quantifier;
    Predicate object;
    std::string object_quantifier;
    std::string text; // without leading verb capitalization or '?'
};

std::optional<Link> spatial_link(Builder& b, const std::string& rel) {
    const auto& oa = b.random_object();
    const auto& ob = b.random_object();
    if (&oa == &ob) return std::nullopt;
    Link l;
    l.relation = rel;
    auto the = [&](const SceneObject& o) { return b.unique_description(o); };
    if (rel == "below") {
        l.subject_quantifier = "any";
        l.subject = b.anchored(oa);
        auto u = the(ob);
        if (!u) return std::nullopt;
        l.object_quantifier = "the";
        l.object = *u;
        l.text = "does " + describe_singular(l.subject, b.vocab()) + " appear below the " +
                 describe_singular(l.object, b.vocab(), false);
    } else if (rel == "directly_above") {
        l.subject_quantifier = "any";
        l.object_quantifier = "any";
        l.subject = b.anchored(oa);
        l.object = b.anchored(ob);
        l.text = "is any " + describe_singular(l.subject, b.vocab(), false) + " directly above " +
                 describe_singular(l.object, b.vocab());
    } else {
        auto ua = the(oa);
        auto ub = the(ob);
        if (!ua || !ub) return std::nullopt;
        l.subject_quantifier = "the";
        l.object_quantifier = "the";
        l.subject = *ua;
        l.object = *ub;
        const std::string phrase = rel == "left_of"    ? " to the left of the "
                                   : rel == "right_of" ? " to the right of the "
                                                       : " above the ";
        l.text = "is the " + describe_singular(l.subject, b.vocab(), false) + phrase +
                 describe_singular(l.object, b.vocab(), false);
    }
    if (l.subject == l.object) return std::nullopt;
    if (b.matching(l.subject).empty() || b.matching(l.object).empty()) return std::nullopt;
    return l;
}

bool link_holds(const Builder& b, const Link& l) {
    const auto& objs = b.scene().objects;
    for (int i : b.matching(l.subject)) {
        for (int j : b.matching(l.object)) {
            if (i != j && relation_holds(l.relation, objs[static_cast<size_t>(i)], objs[static_cast<size_t>(j)])) {
                return true;
            }
        }
    }
    return false;
}

std::optional<Draft> spatial(Builder& b, int, const std::string& name) {
    std::vector<Link> links;
    auto first = spatial_link(b, name);
    if (!first) return std::nullopt;
    links.push_back(*first);
    if (b.difficulty() == Difficulty::hard) {
        const auto& rels = template_names(TaskType::spatial);
        const auto& rel2 = rels[static_cast<size_t>(uniform_int(b.rng(), 0, static_cast<int>(rels.size()) - 1))];
        auto second = spatial_link(b, rel2);
        if (!second) return std::nullopt;
        links.push_back(*second);
    }
    Draft d;
    bool truth = true;
    ojson jl = ojson::array();
    for (size_t i = 0; i < links.size(); ++i) {
        const auto& l = links[i];
        truth = truth && link_holds(b, l);
        std::string t = l.text;
        if (i == 0) t[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(t[0])));
        d.question += (i == 0 ? "" : ", and ") + t;
        jl.push_back({{"relation", l.relation},
                      {"subject", predicate_to_json(l.subject, b.vocab())},
                      {"subject_quantifier", l.subject_quantifier},
                      {"object", predicate_to_json(l.object, b.vocab())},
                      {"object_quantifier", l.object_quantifier}});
    }
    d.question += "?";
    d.options = kYesNo;
    d.answer = yes_no(truth);
    d.query = {{"template", name}, {"links", std::move(jl)}};
    return d;
}

constexpr std::array<const char*, 9> kPositions = {"top-left",    "top-middle", "top-right",
                                                   "middle-left", "center",     "middle-right",
                                                   "bottom-left", "bottom-middle", "bottom-right"};

std::optional<Draft> pattern(Builder& b, int tmpl, const std::string& name) {
    const auto& p = *b.scene().panel;
    const std::string pos = kPositions[static_cast<size_t>(p.masked_row * 3 + p.masked_col)];
    Draft d;
    d.question = tmpl == 0 ? "To complete the pattern, what color should fill the " + pos + " position?"
                           : "Which color belongs in the " + pos + " tile of the pattern panel?";
    for (const auto& c : b.vocab().colors()) d.options.push_back(c.name);
    d.answer = p.answer();
    d.query = {{"template", name}, {"position", pos}};
    return d;
}

std::optional<Draft> existence(Builder& b, int tmpl, const std::string& name) {
    const Predicate p = bernoulli(b.rng(), 0.5) ? b.anchored(b.random_object()) : b.free_predicate();
    Draft d;
    d.question = tmpl == 0 ? "Is there " + describe_singular(p, b.vocab()) + " in the scene?"
                           : "Do you see any " + describe_plural(p, b.vocab()) + "?";
    d.options = kYesNo;
    d.answer = yes_no(b.count(p) > 0);
    d.query = {{"template", name}, {"predicate", predicate_to_json(p, b.vocab())}};
    return d;
}

std::optional<Draft> global(Builder& b, int tmpl, const std::string& name) {
    const auto& objs = b.scene().objects;
    const int n = static_cast<int>(objs.size());
    Draft d;
    d.options = kYesNo;
    d.query = {{"template", name}};
    if (tmpl <= 1) {
        bool same = true;
        for (const auto& o : objs) {
            same = same && (tmpl == 0 ? o.color == objs.front().color : o.size == objs.front().size);
        }
        d.question = tmpl == 0 ? "Are all objects the same color?" : "Are all objects the same size?";
        d.answer = yes_no(same);
        return d;
    }
    static const std::array<std::vector<int>, 3> kOffsets = {{{-3, -2, 2, 3}, {-2, -1, 1, 2}, {-1, 0, 1}}};
    const auto& offs = kOffsets[static_cast<size_t>(index_of(b.difficulty()))];
    const int t = n + offs[static_cast<size_t>(uniform_int(b.rng(), 0, static_cast<int>(offs.size()) - 1))];
    if (t < 1 || t > 12) return std::nullopt;
    bool truth = false;
    if (tmpl == 2) {
        d.question = "Are there more than " + number_word(t) + " objects in total?";
        truth = n > t;
    } else if (tmpl == 3) {
        d.question = "Is the total number of objects at most " + number_word(t) + "?";
        truth = n <= t;
    } else {
        d.question = "Are there at least " + number_word(t) + " objects?";
        truth = n >= t;
    }
    d.answer = yes_no(truth);
    d.query["threshold"] = t;
    return d;
}

std::optional<Draft> attribute_logic(Builder& b, int tmpl, const std::string& name) {
    const auto& o = b.random_object();
    const auto& vocab = b.vocab();
    std::optional<ObjectSize> size;
    if (b.difficulty() == Difficulty::hard) size = o.size;
    const int c0 = bernoulli(b.rng(), 0.5) ? o.color : b.random_color();
    const int c1 = b.random_color_except(c0);
    Predicate group{.shape = o.shape, .size = size};
    const auto members = b.matching(group);
    const auto& objs = b.scene().objects;
    Draft d;
    d.options = kYesNo;
    bool truth = false;
    ojson colors = ojson::array();
    if (tmpl == 0) {
        d.question = "Are there any " + describe_plural(group, vocab) + " that are not " + vocab.color(c0).name + "?";
        for (int i : members) truth = truth || objs[static_cast<size_t>(i)].color != c0;
        colors.push_back(vocab.color(c0).id);
    } else if (tmpl == 1) {
        d.question = "Is every " + describe_singular(group, vocab, false) + " either " + vocab.color(c0).name +
                     " or " + vocab.color(c1).name + "?";
        truth = true;
        for (int i : members) {
            const int c = objs[static_cast<size_t>(i)].color;
            truth = truth && (c == c0 || c == c1);
        }
        colors.push_back(vocab.color(c0).id);
        colors.push_back(vocab.color(c1).id);
    } else {
        d.question = "Is there " + describe_singular(group, vocab) + " that is neither " + vocab.color(c0).name +
                     " nor " + vocab.color(c1).name + "?";
        for (int i : members) {
            const int c = objs[static_cast<size_t>(i)].color;
            truth = truth || (c != c0 && c != c1);
        }
        colors.push_back(vocab.color(c0).id);
        colors.push_back(vocab.color(c1).id);
    }
    d.answer = yes_no(truth);
    d.query = {{"template", name},
               {"shape", vocab.shape(o.shape).id},
               {"size", size ? ojson(to_string(*size)) : ojson(nullptr)},
               {"colors", std::move(colors)}};
    return d;
}

} // namespace

QAExample instantiate_question(const Scene& scene, TaskType task, Difficulty difficulty, std::uint64_t seed,
                               const GenConfig& config, const Vocabulary& vocab) {
    if ((task == TaskType::pattern) != scene.panel.has_value()) {
        throw ValidationError("scene panel presence does not match task " + std::string(to_string(task)));
    }
    if (task != TaskType::pattern && scene.objects.empty()) {
        throw GenerationError("instantiate_question: task " + std::string(to_string(task)) + " needs objects");
    }
    const auto& names = template_names(task);
    std::vector<double> weights = config.template_weights[static_cast<size_t>(index_of(task))];
    if (weights.empty()) weights.assign(names.size(), 1.0);
    if (weights.size() != names.size()) {
        throw ValidationError("template_weights for " + std::string(to_string(task)) + " must have " +
                              std::to_string(names.size()) + " entries");
    }
    for (int attempt = 0; attempt < 1000; ++attempt) {
        Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
        Builder b(scene, difficulty, rng, vocab);
        const int tmpl = weighted_index(rng, weights);
        const auto& name = names[static_cast<size_t>(tmpl)];
        std::optional<Draft> d;
        switch (task) {
        case TaskType::counting: d = counting(b, tmpl, name); break;
        case TaskType::comparison: d = comparison(b, tmpl, name); break;
        case TaskType::spatial: d = spatial(b, tmpl, name); break;
        case TaskType::pattern: d = pattern(b, tmpl, name); break;
        case TaskType::existence: d = existence(b, tmpl, name); break;
        case TaskType::global: d = global(b, tmpl, name); break;
        case TaskType::attribute_logic: d = attribute_logic(b, tmpl, name); break;
        }
        if (!d) continue;
        QAExample e;
        e.question = std::move(d->question);
        e.options = std::move(d->options);
        e.answer = d->answer;
        e.task = task;
        e.difficulty = difficulty;
        e.scene = scene;
        e.query = std::move(d->query);
        return e;
    }
    throw GenerationError("instantiate_question: no well-posed " + std::string(to_string(task)) +
                          " template within 1000 draws");
}

} // namespace svtc
