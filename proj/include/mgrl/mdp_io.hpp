#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgrl/mdp.hpp"

namespace mgrl {

// Text format for finite multi-goal MDPs. Whitespace-separated tokens,
// '#' starts a comment running to end of line. Layout:
//
//   mgrl-mdp 1
//   states S   actions A   goals G   discount GAMMA
//   phi        <S ints>
//   goal_dist  <G reals>
//   init_dist  <G rows of S reals>
//   transition <action index> <S rows of S reals>   (repeated for each action)
//
// save_mdp prints reals with max precision so save -> load is an identity.

namespace detail {

class MdpLexer {
 public:
  explicit MdpLexer(std::istream& in) : in_(in) {}

  bool next(std::string& tok) {
    tok.clear();
    int c;
    while ((c = in_.get()) != EOF) {
      if (c == '#') {
        while ((c = in_.get()) != EOF && c != '\n') {}
        if (c == '\n') ++line_;
        continue;
      }
      if (c == '\n') {
        ++line_;
        continue;
      }
      if (std::isspace(c)) continue;
      tok.push_back(static_cast<char>(c));
      while ((c = in_.get()) != EOF && !std::isspace(c) && c != '#')
        tok.push_back(static_cast<char>(c));
      if (c == '\n') ++line_;
      if (c == '#') in_.unget();
      return true;
    }
    return false;
  }

  std::string expect() {
    std::string tok;
    if (!next(tok)) fail("unexpected end of file");
    return tok;
  }

  double expect_real() {
    std::string tok = expect();
    try {
      std::size_t pos = 0;
      double v = std::stod(tok, &pos);
      if (pos != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      fail("expected a number, got '" + tok + "'");
    }
    return 0.0;
  }

  long expect_int() {
    std::string tok = expect();
    try {
      std::size_t pos = 0;
      long v = std::stol(tok, &pos);
      if (pos != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      fail("expected an integer, got '" + tok + "'");
    }
    return 0;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("mdp file, line " + std::to_string(line_) + ": " + what);
  }

  int line() const { return line_; }

 private:
  std::istream& in_;
  int line_ = 1;
};

inline std::string real_to_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void save_mdp(const FiniteMultiGoalMdp& mdp, std::ostream& out) {
  out << "# mgrl finite multi-goal mdp\n";
  out << "mgrl-mdp 1\n";
  out << "states " << mdp.n_states << "\n";
  out << "actions " << mdp.n_actions << "\n";
  out << "goals " << mdp.n_goals << "\n";
  out << "discount " << detail::real_to_text(mdp.discount) << "\n";
  out << "phi\n";
  for (int s = 0; s < mdp.n_states; ++s)
    out << mdp.goal_map[s] << (s + 1 == mdp.n_states ? "\n" : " ");
  out << "goal_dist\n";
  for (int g = 0; g < mdp.n_goals; ++g)
    out << detail::real_to_text(mdp.goal_dist[g]) << (g + 1 == mdp.n_goals ? "\n" : " ");
  out << "init_dist\n";
  for (int g = 0; g < mdp.n_goals; ++g) {
    for (int s = 0; s < mdp.n_states; ++s)
      out << detail::real_to_text(mdp.init_dist.at(g, s)) << (s + 1 == mdp.n_states ? "\n" : " ");
  }
  for (int a = 0; a < mdp.n_actions; ++a) {
    out << "transition " << a << "\n";
    for (int s = 0; s < mdp.n_states; ++s) {
      for (int s2 = 0; s2 < mdp.n_states; ++s2)
        out << detail::real_to_text(mdp.transition.at(s, a, s2))
            << (s2 + 1 == mdp.n_states ? "\n" : " ");
    }
  }
}

inline void save_mdp(const FiniteMultiGoalMdp& mdp, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_mdp: cannot open " + path);
  save_mdp(mdp, out);
  if (!out) throw std::runtime_error("save_mdp: write failed for " + path);
}

inline FiniteMultiGoalMdp load_mdp(std::istream& in) {
  detail::MdpLexer lex(in);
  std::string tok = lex.expect();
  if (tok != "mgrl-mdp") lex.fail("expected header 'mgrl-mdp'");
  long version = lex.expect_int();
  if (version != 1) lex.fail("unsupported format version " + std::to_string(version));

  FiniteMultiGoalMdp mdp;
  auto keyword = [&](const char* want) {
    std::string k = lex.expect();
    if (k != want) lex.fail(std::string("expected '") + want + "', got '" + k + "'");
  };

  keyword("states");
  mdp.n_states = static_cast<int>(lex.expect_int());
  keyword("actions");
  mdp.n_actions = static_cast<int>(lex.expect_int());
  keyword("goals");
  mdp.n_goals = static_cast<int>(lex.expect_int());
  if (mdp.n_states <= 0 || mdp.n_actions <= 0 || mdp.n_goals <= 0)
    lex.fail("counts must be positive");
  keyword("discount");
  mdp.discount = lex.expect_real();

  keyword("phi");
  mdp.goal_map.resize(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s)
    mdp.goal_map[s] = static_cast<int>(lex.expect_int());

  keyword("goal_dist");
  mdp.goal_dist.resize(mdp.n_goals);
  for (int g = 0; g < mdp.n_goals; ++g) mdp.goal_dist[g] = lex.expect_real();

  keyword("init_dist");
  mdp.init_dist = Table2(mdp.n_goals, mdp.n_states);
  for (int g = 0; g < mdp.n_goals; ++g)
    for (int s = 0; s < mdp.n_states; ++s) mdp.init_dist.at(g, s) = lex.expect_real();

  mdp.transition = Table3(mdp.n_states, mdp.n_actions, mdp.n_states, 0.0);
  for (int a = 0; a < mdp.n_actions; ++a) {
    keyword("transition");
    long idx = lex.expect_int();
    if (idx != a) lex.fail("transition blocks must appear in action order");
    for (int s = 0; s < mdp.n_states; ++s) {
      int row_line = lex.line();
      double sum = 0.0;
      for (int s2 = 0; s2 < mdp.n_states; ++s2) {
        double p = lex.expect_real();
        if (p < 0.0)
          throw std::runtime_error("mdp file, line " + std::to_string(row_line) +
                                   ": negative probability in transition row");
        mdp.transition.at(s, a, s2) = p;
        sum += p;
      }
      if (std::fabs(sum - 1.0) > kProbTol)
        throw std::runtime_error("mdp file, line " + std::to_string(row_line) +
                                 ": transition row for (s=" + std::to_string(s) +
                                 ", a=" + std::to_string(a) + ") sums to " +
                                 std::to_string(sum));
    }
  }
  if (lex.next(tok)) lex.fail("trailing content '" + tok + "'");

  mdp.validate();
  return mdp;
}

inline FiniteMultiGoalMdp load_mdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_mdp: cannot open " + path);
  return load_mdp(in);
}

}  // namespace mgrl
