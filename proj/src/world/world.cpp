#include "toolpref/world/world.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "toolpref/errors.hpp"
#include "toolpref/random.hpp"

namespace toolpref {

namespace {

const std::vector<std::string> kProviders = {
    "vimeo",    "ytstream", "shopscraper", "weatherly", "scorecast",  "tripplanner", "newswire",   "recipebox",
    "fitlog",   "gamestats", "tunebase",   "stockpulse", "coinwatch", "jobfinder",   "homefinder", "flighttrack"};
const std::vector<std::string> kCategoryNames = {
    "video",  "media", "commerce", "weather", "sports", "travel", "news",   "food",
    "health", "gaming", "music",   "finance", "crypto", "jobs",   "realty", "aviation"};
const std::vector<std::string> kVerbs = {"get", "search", "list", "download", "check"};
const std::map<std::string, std::vector<std::string>> kSynonyms = {
    {"get", {"retrieve", "obtain", "fetch"}},
    {"search", {"find", "look up", "query"}},
    {"list", {"show", "enumerate", "display"}},
    {"download", {"stream", "grab", "save"}},
    {"check", {"verify", "inspect", "confirm"}},
};
const std::vector<std::string> kNouns = {"videos",   "channels", "people",   "details",   "reviews", "offers",
                                         "prices",   "stats",    "profile",  "comments",  "images",  "playlists",
                                         "events",   "scores",   "forecast", "rates",     "listings", "schedule"};
const std::vector<std::string> kTextWords = {"award",   "winning", "film",   "festival", "summer", "jazz",
                                             "classic", "mountain", "city",  "budget",   "electric", "vintage",
                                             "ocean",   "family",  "night",  "street",   "garden", "retro"};

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[uniform_index(rng, v.size())];
}

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string random_value(ParamType type, Rng& rng) {
  switch (type) {
    case ParamType::Code: {
      static const char* alphabet = "ABCDEFGHJKLMNPQRSTUVWXYZ0123456789";
      std::string s = "B0";
      for (int i = 0; i < 8; ++i) s.push_back(alphabet[uniform_index(rng, 34)]);
      s[2] = "ABCDEFGHJKLMNPQRSTUVWXYZ"[uniform_index(rng, 24)];
      return s;
    }
    case ParamType::Number: return std::to_string(10 + uniform_index(rng, 9990));
    case ParamType::Text: {
      std::string a = pick(kTextWords, rng);
      std::string b = pick(kTextWords, rng);
      while (b == a) b = pick(kTextWords, rng);
      return a + " " + b;
    }
  }
  return {};
}

std::string param_name(ParamType type) {
  switch (type) {
    case ParamType::Code: return "id";
    case ParamType::Number: return "count";
    case ParamType::Text: return "query";
  }
  return "arg";
}

std::string hex8(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(8, '0');
  for (int i = 7; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

std::string error_payload(const std::string& message) { return "{\"error\": \"" + message + "\"}"; }

struct Generator {
  const WorldConfig& cfg;
  Rng rng;
  std::vector<ToolSpec> tools;
  std::vector<std::vector<std::size_t>> by_category;  // tool indices per category
  std::vector<std::string> category_names;
  std::vector<bool> category_held_out;
  std::set<std::string> queries;

  explicit Generator(const WorldConfig& c) : cfg(c), rng(c.seed) {}

  void make_catalog() {
    for (int c = 0; c < cfg.n_categories; ++c) {
      const std::size_t ci = static_cast<std::size_t>(c);
      std::string provider = kProviders[ci % kProviders.size()];
      std::string category = kCategoryNames[ci % kCategoryNames.size()];
      if (ci >= kProviders.size()) {
        provider += std::to_string(ci / kProviders.size());
        category += std::to_string(ci / kCategoryNames.size());
      }
      category_names.push_back(category);
      by_category.emplace_back();

      std::vector<std::string> nouns = kNouns;
      shuffle_in_place(nouns, rng);
      const int n_nouns = (cfg.tools_per_category + 1) / 2;
      int made = 0;
      for (int k = 0; k < n_nouns && made < cfg.tools_per_category; ++k) {
        std::vector<std::string> verbs = kVerbs;
        shuffle_in_place(verbs, rng);
        for (int v = 0; v < 2 && made < cfg.tools_per_category; ++v, ++made) {
          ToolSpec t;
          t.verb = verbs[static_cast<std::size_t>(v)];
          t.noun = nouns[static_cast<std::size_t>(k)];
          t.provider = provider;
          t.category = category;
          t.name = t.verb + t.noun + "_for_" + provider;
          t.description = capitalize(t.verb) + " " + t.noun + " from " + provider + ".";
          const auto type = static_cast<ParamType>(uniform_index(rng, 3));
          t.required.push_back(ParamSpec{param_name(type), type});
          if (bernoulli(rng, 0.5)) t.optional.push_back(ParamSpec{"format", ParamType::Text});
          t.accessible = !bernoulli(rng, cfg.inaccessible_fraction);
          by_category.back().push_back(tools.size());
          tools.push_back(std::move(t));
        }
      }
    }

    std::vector<std::size_t> order(static_cast<std::size_t>(cfg.n_categories));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_in_place(order, rng);
    category_held_out.assign(order.size(), false);
    for (int i = 0; i < cfg.held_out_categories; ++i) category_held_out[order[static_cast<std::size_t>(i)]] = true;

    for (std::size_t c = 0; c < by_category.size(); ++c) {
      if (category_held_out[c]) {
        for (std::size_t ti : by_category[c]) tools[ti].held_out = true;
        continue;
      }
      std::vector<std::size_t> idx = by_category[c];
      shuffle_in_place(idx, rng);
      for (int i = 0; i < cfg.held_out_tools_per_category; ++i) tools[idx[static_cast<std::size_t>(i)]].held_out = true;
    }
  }

  std::vector<std::size_t> categories_where(bool held_out) const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < category_held_out.size(); ++c) {
      if (category_held_out[c] == held_out) out.push_back(c);
    }
    return out;
  }

  // Tools of category c filtered by held-out flag (nullopt = any).
  std::vector<std::size_t> tools_of(std::size_t c, std::optional<bool> held_out) const {
    std::vector<std::size_t> out;
    for (std::size_t ti : by_category[c]) {
      if (!held_out || tools[ti].held_out == *held_out) out.push_back(ti);
    }
    return out;
  }

  // Draws k tools with pairwise distinct nouns; empty if the pool cannot supply them.
  std::vector<std::size_t> distinct_noun_tools(std::vector<std::size_t> pool, std::size_t k,
                                               const std::set<std::string>& taken_nouns = {}) {
    shuffle_in_place(pool, rng);
    std::vector<std::size_t> out;
    std::set<std::string> nouns = taken_nouns;
    for (std::size_t ti : pool) {
      if (out.size() == k) break;
      if (nouns.insert(tools[ti].noun).second) out.push_back(ti);
    }
    if (out.size() < k) out.clear();
    return out;
  }

  std::string verb_phrase(const ToolSpec& t) {
    if (!bernoulli(rng, cfg.synonym_rate)) return t.verb;
    return pick(kSynonyms.at(t.verb), rng);
  }

  Task make_task(const std::string& id, TaskGroup group, std::optional<Scenario> scenario,
                 const std::vector<std::size_t>& chosen, std::size_t n_goals_g1, bool test_scope) {
    Task task;
    task.id = id;
    task.group = group;
    task.scenario = scenario;

    std::vector<std::size_t> goal_tools;
    if (group == TaskGroup::G1) {
      goal_tools.assign(n_goals_g1, chosen.front());
    } else {
      goal_tools = chosen;
    }

    std::set<std::string> used_values;
    std::vector<std::string> clauses;
    for (std::size_t i = 0; i < goal_tools.size(); ++i) {
      const ToolSpec& t = tools[goal_tools[i]];
      SubGoal g;
      g.tool = t.name;
      g.param = t.required.front().name;
      do {
        g.value = random_value(t.required.front().type, rng);
      } while (!used_values.insert(g.value).second);
      if (group != TaskGroup::G1 && i > 0 && bernoulli(rng, cfg.dependency_rate)) g.depends_on = i - 1;

      std::string clause = verb_phrase(t) + " the " + t.noun;
      if (bernoulli(rng, cfg.provider_mention_rate)) clause += " on " + t.provider;
      if (g.depends_on) {
        clause = "Then " + clause + " for the " + tools[goal_tools[*g.depends_on]].noun + " reference.";
      } else {
        clause = capitalize(clause) + " for \"" + g.value + "\".";
      }
      clauses.push_back(std::move(clause));
      task.required_calls.push_back(std::move(g));
    }

    std::ostringstream q;
    q << "I need help with a task.";
    for (const auto& c : clauses) q << ' ' << c;
    q << " Begin!";
    task.query = q.str();

    std::set<std::string> cats;
    for (std::size_t ti : goal_tools) cats.insert(tools[ti].category);
    for (std::size_t c = 0; c < category_names.size(); ++c) {
      if (!cats.count(category_names[c])) continue;
      task.categories.push_back(category_names[c]);
      for (std::size_t ti : by_category[c]) {
        if (test_scope || !tools[ti].held_out) task.scope.push_back(tools[ti].name);
      }
    }
    return task;
  }

  // Picks tools for one task of the group from the given category pools.
  std::vector<std::size_t> choose_tools(TaskGroup group, const std::vector<std::size_t>& cats,
                                        std::optional<bool> tool_held_out, bool require_held_out_tool) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      if (group == TaskGroup::G1) {
        std::size_t c = pick(cats, rng);
        auto pool = tools_of(c, tool_held_out);
        if (pool.empty()) continue;
        return {pick(pool, rng)};
      }
      const std::size_t k = 2 + uniform_index(rng, 2);
      if (group == TaskGroup::G2) {
        std::size_t c = pick(cats, rng);
        auto out = distinct_noun_tools(tools_of(c, tool_held_out), k);
        if (out.empty()) continue;
        if (require_held_out_tool &&
            std::none_of(out.begin(), out.end(), [&](std::size_t ti) { return tools[ti].held_out; })) {
          continue;
        }
        return out;
      }
      if (cats.size() < 2) break;
      std::vector<std::size_t> two = cats;
      shuffle_in_place(two, rng);
      auto first = distinct_noun_tools(tools_of(two[0], tool_held_out), k - 1);
      if (first.empty()) continue;
      std::set<std::string> taken;
      for (std::size_t ti : first) taken.insert(tools[ti].noun);
      auto second = distinct_noun_tools(tools_of(two[1], tool_held_out), 1, taken);
      if (second.empty()) continue;
      first.insert(first.begin() + 1, second.front());
      return first;
    }
    throw ConfigError("cannot draw tools for a task; catalog too small for the requested splits");
  }

  void add_task(std::vector<Task>& tasks, const std::string& id, TaskGroup group, std::optional<Scenario> scenario,
                const std::vector<std::size_t>& cats, std::optional<bool> tool_held_out, bool test_scope) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      auto chosen = choose_tools(group, cats, tool_held_out, false);
      const std::size_t n_goals = 1 + uniform_index(rng, 2);
      Task t = make_task(id, group, scenario, chosen, n_goals, test_scope);
      if (queries.insert(t.query).second) {
        tasks.push_back(std::move(t));
        return;
      }
    }
    throw ConfigError("could not generate a unique instruction for task " + id);
  }
};

std::string pad(int i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

}  // namespace

const char* to_string(ParamType t) {
  switch (t) {
    case ParamType::Code: return "code";
    case ParamType::Text: return "text";
    case ParamType::Number: return "number";
  }
  return "?";
}

ParamType param_type_from_string(const std::string& s) {
  if (s == "code") return ParamType::Code;
  if (s == "text") return ParamType::Text;
  if (s == "number") return ParamType::Number;
  throw SchemaError("unknown parameter type '" + s + "'");
}

ParamType infer_value_type(const std::string& value) {
  if (!value.empty() && std::all_of(value.begin(), value.end(), [](unsigned char c) { return std::isdigit(c); })) {
    return ParamType::Number;
  }
  const bool code_chars = value.size() >= 6 && std::all_of(value.begin(), value.end(), [](unsigned char c) {
                            return std::isdigit(c) || std::isupper(c);
                          });
  const bool has_letter = std::any_of(value.begin(), value.end(), [](unsigned char c) { return std::isupper(c); });
  return code_chars && has_letter ? ParamType::Code : ParamType::Text;
}

const char* to_string(TaskGroup g) {
  switch (g) {
    case TaskGroup::G1: return "G1";
    case TaskGroup::G2: return "G2";
    case TaskGroup::G3: return "G3";
  }
  return "?";
}

const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::G1_Ins: return "G1-Ins";
    case Scenario::G1_Tool: return "G1-Tool";
    case Scenario::G1_Cat: return "G1-Cat";
    case Scenario::G2_Ins: return "G2-Ins";
    case Scenario::G2_Cat: return "G2-Cat";
    case Scenario::G3_Ins: return "G3-Ins";
  }
  return "?";
}

Scenario scenario_from_string(const std::string& s) {
  for (Scenario sc : kAllScenarios) {
    if (s == to_string(sc)) return sc;
  }
  throw SchemaError("unknown scenario '" + s + "'");
}

void WorldConfig::validate() const {
  if (n_categories < 1) throw ConfigError("n_categories must be positive");
  if (held_out_categories < 1) throw ConfigError("held_out_categories must be >= 1 for the category splits");
  if (n_categories - held_out_categories < 2) {
    throw ConfigError("need at least 2 seen categories besides the " + std::to_string(held_out_categories) +
                      " held-out ones (n_categories=" + std::to_string(n_categories) + ")");
  }
  if (tools_per_category < 4) throw ConfigError("tools_per_category must be >= 4");
  if (held_out_tools_per_category < 1 || tools_per_category - held_out_tools_per_category < 3) {
    throw ConfigError("held_out_tools_per_category must be in [1, tools_per_category - 3]");
  }
  if (tools_per_category > 2 * static_cast<int>(kNouns.size())) throw ConfigError("tools_per_category too large");
  if (tasks_per_scenario < 0 || train_tasks_per_group < 0) throw ConfigError("task counts must be non-negative");
  auto unit = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must be in [0, 1]");
  };
  unit(error_rate, "error_rate");
  unit(inaccessible_fraction, "inaccessible_fraction");
  unit(synonym_rate, "synonym_rate");
  unit(provider_mention_rate, "provider_mention_rate");
  unit(dependency_rate, "dependency_rate");
}

Json world_config_to_json(const WorldConfig& c) {
  return Json{{"seed", c.seed},
              {"n_categories", c.n_categories},
              {"tools_per_category", c.tools_per_category},
              {"tasks_per_scenario", c.tasks_per_scenario},
              {"train_tasks_per_group", c.train_tasks_per_group},
              {"held_out_categories", c.held_out_categories},
              {"held_out_tools_per_category", c.held_out_tools_per_category},
              {"error_rate", c.error_rate},
              {"inaccessible_fraction", c.inaccessible_fraction},
              {"synonym_rate", c.synonym_rate},
              {"provider_mention_rate", c.provider_mention_rate},
              {"dependency_rate", c.dependency_rate}};
}

WorldConfig world_config_from_json(const Json& j) {
  WorldConfig c;
  if (!j.is_object()) throw ConfigError("world config must be an object");
  try {
    c.seed = j.value("seed", c.seed);
    c.n_categories = j.value("n_categories", c.n_categories);
    c.tools_per_category = j.value("tools_per_category", c.tools_per_category);
    c.tasks_per_scenario = j.value("tasks_per_scenario", c.tasks_per_scenario);
    c.train_tasks_per_group = j.value("train_tasks_per_group", c.train_tasks_per_group);
    c.held_out_categories = j.value("held_out_categories", c.held_out_categories);
    c.held_out_tools_per_category = j.value("held_out_tools_per_category", c.held_out_tools_per_category);
    c.error_rate = j.value("error_rate", c.error_rate);
    c.inaccessible_fraction = j.value("inaccessible_fraction", c.inaccessible_fraction);
    c.synonym_rate = j.value("synonym_rate", c.synonym_rate);
    c.provider_mention_rate = j.value("provider_mention_rate", c.provider_mention_rate);
    c.dependency_rate = j.value("dependency_rate", c.dependency_rate);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("world config: ") + e.what());
  }
  return c;
}

World::World(WorldConfig config, std::vector<ToolSpec> tools, std::vector<Task> tasks)
    : config_(std::move(config)), tools_(std::move(tools)), tasks_(std::move(tasks)) {
  for (std::size_t i = 0; i < tools_.size(); ++i) {
    if (!tool_index_.emplace(tools_[i].name, i).second) throw ConfigError("duplicate tool name " + tools_[i].name);
  }
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    if (!task_index_.emplace(tasks_[i].id, i).second) throw ConfigError("duplicate task id " + tasks_[i].id);
  }
}

const ToolSpec* World::find_tool(const std::string& name) const {
  auto it = tool_index_.find(name);
  return it == tool_index_.end() ? nullptr : &tools_[it->second];
}

const ToolSpec& World::tool(const std::string& name) const {
  const ToolSpec* t = find_tool(name);
  if (!t) throw UnknownTool("unknown tool '" + name + "'");
  return *t;
}

const Task& World::task(const std::string& id) const {
  auto it = task_index_.find(id);
  if (it == task_index_.end()) throw UnknownTask("unknown task '" + id + "'");
  return tasks_[it->second];
}

std::vector<const Task*> World::training_tasks() const {
  std::vector<const Task*> out;
  for (const auto& t : tasks_) {
    if (t.is_training()) out.push_back(&t);
  }
  return out;
}

std::vector<const Task*> World::scenario_tasks(Scenario s) const {
  std::vector<const Task*> out;
  for (const auto& t : tasks_) {
    if (t.scenario == s) out.push_back(&t);
  }
  return out;
}

bool World::is_flaky(const Task& task, const std::string& tool) const {
  const std::uint64_t h = hash_combine(hash_combine(hash_combine(config_.seed, "flaky"), task.id), tool);
  return unit_from_hash(h) < config_.error_rate;
}

bool World::callable(const Task& task, const std::string& tool) const {
  const ToolSpec* t = find_tool(tool);
  return t && t->accessible && !is_flaky(task, tool);
}

World gen_world(const WorldConfig& config) {
  config.validate();
  Generator gen(config);
  gen.make_catalog();

  const auto seen_cats = gen.categories_where(false);
  const auto unseen_cats = gen.categories_where(true);

  std::vector<Task> tasks;
  const TaskGroup groups[] = {TaskGroup::G1, TaskGroup::G2, TaskGroup::G3};
  for (TaskGroup g : groups) {
    for (int i = 0; i < config.train_tasks_per_group; ++i) {
      gen.add_task(tasks, std::string("train-") + to_string(g) + "-" + pad(i), g, std::nullopt, seen_cats, false,
                   false);
    }
  }
  for (Scenario s : kAllScenarios) {
    for (int i = 0; i < config.tasks_per_scenario; ++i) {
      const std::string id = std::string("test-") + to_string(s) + "-" + pad(i);
      switch (s) {
        case Scenario::G1_Ins: gen.add_task(tasks, id, TaskGroup::G1, s, seen_cats, false, true); break;
        case Scenario::G1_Tool: gen.add_task(tasks, id, TaskGroup::G1, s, seen_cats, true, true); break;
        case Scenario::G1_Cat: gen.add_task(tasks, id, TaskGroup::G1, s, unseen_cats, std::nullopt, true); break;
        case Scenario::G2_Ins: gen.add_task(tasks, id, TaskGroup::G2, s, seen_cats, false, true); break;
        case Scenario::G2_Cat: gen.add_task(tasks, id, TaskGroup::G2, s, unseen_cats, std::nullopt, true); break;
        case Scenario::G3_Ins: gen.add_task(tasks, id, TaskGroup::G3, s, seen_cats, false, true); break;
      }
    }
  }

  World world(config, std::move(gen.tools), std::move(tasks));
  std::vector<Task> finished = world.tasks();
  for (Task& t : finished) {
    t.solvable = std::all_of(t.required_calls.begin(), t.required_calls.end(),
                             [&](const SubGoal& g) { return world.callable(t, g.tool); });
  }
  return World(config, world.tools(), std::move(finished));
}

Json world_to_json(const World& world) {
  Json j;
  j["format"] = "toolpref-world";
  j["version"] = 1;
  j["config"] = world_config_to_json(world.config());
  Json tools = Json::array();
  for (const auto& t : world.tools()) {
    Json o;
    o["name"] = t.name;
    o["category"] = t.category;
    o["provider"] = t.provider;
    o["verb"] = t.verb;
    o["noun"] = t.noun;
    o["description"] = t.description;
    auto params = [](const std::vector<ParamSpec>& ps) {
      Json a = Json::array();
      for (const auto& p : ps) a.push_back(Json{{"name", p.name}, {"type", to_string(p.type)}});
      return a;
    };
    o["required_parameters"] = params(t.required);
    o["optional_parameters"] = params(t.optional);
    o["accessible"] = t.accessible;
    o["held_out"] = t.held_out;
    tools.push_back(std::move(o));
  }
  j["tools"] = std::move(tools);
  Json tasks = Json::array();
  for (const auto& t : world.tasks()) {
    Json o;
    o["id"] = t.id;
    o["split"] = t.is_training() ? "train" : "test";
    o["scenario"] = t.scenario ? Json(to_string(*t.scenario)) : Json(nullptr);
    o["group"] = to_string(t.group);
    o["query"] = t.query;
    o["categories"] = t.categories;
    Json goals = Json::array();
    for (const auto& g : t.required_calls) {
      goals.push_back(Json{{"tool", g.tool},
                           {"param", g.param},
                           {"value", g.value},
                           {"depends_on", g.depends_on ? Json(*g.depends_on) : Json(nullptr)}});
    }
    o["required_calls"] = std::move(goals);
    o["scope"] = t.scope;
    o["solvable"] = t.solvable;
    tasks.push_back(std::move(o));
  }
  j["tasks"] = std::move(tasks);
  return j;
}

World world_from_json(const Json& j) {
  try {
    if (j.value("format", "") != "toolpref-world") throw SchemaError("not a toolpref world document");
    WorldConfig config = world_config_from_json(j.at("config"));
    std::vector<ToolSpec> tools;
    for (const Json& o : j.at("tools")) {
      ToolSpec t;
      t.name = o.at("name").get<std::string>();
      t.category = o.at("category").get<std::string>();
      t.provider = o.at("provider").get<std::string>();
      t.verb = o.at("verb").get<std::string>();
      t.noun = o.at("noun").get<std::string>();
      t.description = o.at("description").get<std::string>();
      for (const Json& p : o.at("required_parameters")) {
        t.required.push_back(ParamSpec{p.at("name").get<std::string>(), param_type_from_string(p.at("type"))});
      }
      for (const Json& p : o.at("optional_parameters")) {
        t.optional.push_back(ParamSpec{p.at("name").get<std::string>(), param_type_from_string(p.at("type"))});
      }
      t.accessible = o.at("accessible").get<bool>();
      t.held_out = o.at("held_out").get<bool>();
      tools.push_back(std::move(t));
    }
    std::vector<Task> tasks;
    for (const Json& o : j.at("tasks")) {
      Task t;
      t.id = o.at("id").get<std::string>();
      if (!o.at("scenario").is_null()) t.scenario = scenario_from_string(o.at("scenario").get<std::string>());
      const std::string g = o.at("group").get<std::string>();
      t.group = g == "G1" ? TaskGroup::G1 : g == "G2" ? TaskGroup::G2 : TaskGroup::G3;
      t.query = o.at("query").get<std::string>();
      t.categories = o.at("categories").get<std::vector<std::string>>();
      for (const Json& go : o.at("required_calls")) {
        SubGoal sg;
        sg.tool = go.at("tool").get<std::string>();
        sg.param = go.at("param").get<std::string>();
        sg.value = go.at("value").get<std::string>();
        if (!go.at("depends_on").is_null()) sg.depends_on = go.at("depends_on").get<std::size_t>();
        t.required_calls.push_back(std::move(sg));
      }
      t.scope = o.at("scope").get<std::vector<std::string>>();
      t.solvable = o.at("solvable").get<bool>();
      tasks.push_back(std::move(t));
    }
    return World(std::move(config), std::move(tools), std::move(tasks));
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("world document: ") + e.what());
  }
}

void save_world(const World& world, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write world file '" + path + "'");
  out << world_to_json(world).dump(1) << '\n';
}

World load_world(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open world file '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw SchemaError(std::string("world file: ") + e.what());
  }
  return world_from_json(j);
}

ApiResponse execute(const World& world, const Task& task, const ApiAction& action) {
  const ToolSpec& t = world.tool(action.tool_name);
  if (!t.accessible) return ApiResponse{ResponseStatus::Error, kInvalidKeyPayload};
  for (const auto& [name, value] : action.arguments) {
    auto known = [&](const std::vector<ParamSpec>& ps) {
      return std::any_of(ps.begin(), ps.end(), [&](const ParamSpec& p) { return p.name == name; });
    };
    if (!known(t.required) && !known(t.optional)) {
      return ApiResponse{ResponseStatus::Error, error_payload("Unexpected parameter '" + name + "'")};
    }
  }
  for (const auto& p : t.required) {
    const std::string* v = action.argument(p.name);
    if (!v) return ApiResponse{ResponseStatus::Error, error_payload("Missing required parameter '" + p.name + "'")};
    if (infer_value_type(*v) != p.type) {
      return ApiResponse{ResponseStatus::Error, error_payload("Invalid value for parameter '" + p.name + "'")};
    }
  }
  if (world.is_flaky(task, t.name)) {
    return ApiResponse{ResponseStatus::Error, error_payload("Service unavailable, please try again later")};
  }

  const std::string& input = *action.argument(t.required.front().name);
  std::ostringstream out;
  out << "{\"tool\": \"" << t.name << "\", \"input\": \"" << input << "\", \"results\": [";
  std::optional<std::size_t> matched;
  for (std::size_t i = 0; i < task.required_calls.size(); ++i) {
    const SubGoal& g = task.required_calls[i];
    if (g.tool == t.name && g.value == input) {
      matched = i;
      break;
    }
  }
  if (matched) {
    const std::uint64_t h = hash_combine(hash_combine(hash_combine(world.config().seed, task.id), t.name), input);
    out << "{\"" << t.noun << "\": \"record-" << hex8(h) << "\"}";
  }
  out << "]";
  if (matched) {
    for (const SubGoal& g : task.required_calls) {
      if (g.depends_on == matched) {
        out << ", \"ref\": \"" << g.value << "\"";
        break;
      }
    }
  }
  out << "}";
  return ApiResponse{ResponseStatus::Ok, out.str()};
}

GoalState goal_state(const World&, const Task& task, const std::vector<HistoryStep>& history) {
  GoalState s;
  s.satisfied.assign(task.required_calls.size(), false);
  for (std::size_t i = 0; i < task.required_calls.size(); ++i) {
    const SubGoal& g = task.required_calls[i];
    for (const auto& step : history) {
      if (!step.response.ok() || step.action.tool_name != g.tool) continue;
      const std::string* v = step.action.argument(g.param);
      if (v && *v == g.value) {
        s.satisfied[i] = true;
        break;
      }
    }
  }
  s.n_satisfied = static_cast<std::size_t>(std::count(s.satisfied.begin(), s.satisfied.end(), true));
  s.all_satisfied = !task.required_calls.empty() && s.n_satisfied == task.required_calls.size();
  s.partial_credit =
      task.required_calls.empty() ? 0.0 : static_cast<double>(s.n_satisfied) / static_cast<double>(task.required_calls.size());
  return s;
}

std::string compose_final_answer(const World& world, const Task& task, const std::vector<HistoryStep>& history) {
  const GoalState gs = goal_state(world, task, history);
  if (gs.n_satisfied == 0) return "Sorry, I could not retrieve the requested information.";
  std::ostringstream out;
  out << (gs.all_satisfied ? "Here is what I found:" : "Sorry, I could only complete part of the request:");
  for (std::size_t i = 0; i < task.required_calls.size(); ++i) {
    if (!gs.satisfied[i]) continue;
    const SubGoal& g = task.required_calls[i];
    out << ' ' << world.tool(g.tool).noun << " for " << g.value << ';';
  }
  return out.str();
}

std::vector<std::string> revealed_values(const ApiResponse& response) {
  std::vector<std::string> out;
  if (!response.ok()) return out;
  static const std::string key = "\"ref\": \"";
  std::size_t pos = 0;
  while ((pos = response.payload.find(key, pos)) != std::string::npos) {
    pos += key.size();
    std::size_t end = response.payload.find('"', pos);
    if (end == std::string::npos) break;
    out.push_back(response.payload.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

bool has_results(const ApiResponse& response) {
  return response.ok() && response.payload.find("\"results\": [{") != std::string::npos;
}

const std::vector<std::string>& verb_synonyms(const std::string& verb) {
  static const std::vector<std::string> none;
  auto it = kSynonyms.find(verb);
  return it == kSynonyms.end() ? none : it->second;
}

std::vector<std::string> observable_values(const Task& task, const std::vector<HistoryStep>& history) {
  std::vector<std::string> out;
  auto add = [&](const std::string& v) {
    if (!v.empty() && std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  };
  const std::string& q = task.query;
  std::size_t pos = 0;
  while ((pos = q.find('"', pos)) != std::string::npos) {
    std::size_t end = q.find('"', pos + 1);
    if (end == std::string::npos) break;
    add(q.substr(pos + 1, end - pos - 1));
    pos = end + 1;
  }
  for (const auto& step : history) {
    for (const auto& v : revealed_values(step.response)) add(v);
  }
  return out;
}

std::vector<ApiAction> candidate_calls(const World& world, const Task& task, const std::vector<HistoryStep>& history) {
  const auto values = observable_values(task, history);
  std::vector<ApiAction> out;
  for (const auto& name : task.scope) {
    const ToolSpec& t = world.tool(name);
    const std::string& param = t.required.front().name;
    for (const auto& v : values) out.push_back(ApiAction{name, {{param, v}}});
    out.push_back(ApiAction{name, {}});
  }
  return out;
}

}  // namespace toolpref
