#pragma once

// Bundled demo programs.

#include <string>
#include <string_view>

#include "jitleak/assembly.hpp"

namespace jitleak::programs {

inline constexpr std::string_view kVerifyPin = R"(global pin = 5
method verifyPin(x0):
  0: load x0
  1: get pin
  2: binop sub
  3: ifeq 6
  4: push 0
  5: goto 8
  6: push 1
  7: goto 8
  8: return
entry verifyPin
public x0
)";

/// Eight characters packed little-end-first into one 64-bit word.
inline Value pack8(std::string_view s) {
  std::uint64_t v = 0;
  for (std::size_t k = 0; k < 8 && k < s.size(); ++k)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[k]) & 0x7f) << (8 * k);
  return static_cast<Value>(v);
}

// The stored password is secret; the guess is attacker supplied. Both arms
// of the character compare clear one flag so they cost the same.
inline std::string pwd_eq_source() {
  return "global pwd = " + std::to_string(pack8("password")) + R"(
method pwdEq(a):
  0: push 1
  1: store equal
  2: push 1
  3: store shmequal
  4: load a
  5: store x
  6: get pwd
  7: store y
  8: push 0
  9: store i
  10: push 8
  11: load i
  12: binop lt
  13: ifeq 41
  14: push 255
  15: load x
  16: binop and
  17: push 255
  18: load y
  19: binop and
  20: binop sub
  21: ifneq 25
  22: push 0
  23: store shmequal
  24: goto 28
  25: push 0
  26: store equal
  27: goto 28
  28: push 256
  29: load x
  30: binop div
  31: store x
  32: push 256
  33: load y
  34: binop div
  35: store y
  36: push 1
  37: load i
  38: binop add
  39: store i
  40: goto 10
  41: load equal
  42: return
entry pwdEq
public a
)";
}

inline constexpr Point kPwdEqCompare = 21;

// guess <= secret runs n*n calls of consume1, otherwise n*n calls of consume2.
inline constexpr std::string_view kCheckSecret = R"(global secret = 1000
global n = 4
method consume1():
  0: push 0
  1: push 1
  2: binop add
  3: pop
  4: push 0
  5: return
method consume2():
  0: push 0
  1: push 1
  2: binop add
  3: pop
  4: push 0
  5: return
method checkSecret(guess):
  0: load guess
  1: get secret
  2: binop lt
  3: ifneq 29
  4: push 0
  5: store i
  6: get n
  7: load i
  8: binop lt
  9: ifeq 28
  10: push 0
  11: store t
  12: get n
  13: load t
  14: binop lt
  15: ifeq 23
  16: invoke consume1
  17: pop
  18: push 1
  19: load t
  20: binop add
  21: store t
  22: goto 12
  23: push 1
  24: load i
  25: binop add
  26: store i
  27: goto 6
  28: goto 54
  29: push 0
  30: store i
  31: get n
  32: load i
  33: binop lt
  34: ifeq 53
  35: push 0
  36: store t
  37: get n
  38: load t
  39: binop lt
  40: ifeq 48
  41: invoke consume2
  42: pop
  43: push 1
  44: load t
  45: binop add
  46: store t
  47: goto 37
  48: push 1
  49: load i
  50: binop add
  51: store i
  52: goto 31
  53: goto 54
  54: push 0
  55: return
entry checkSecret
public guess n
)";

inline constexpr Point kCheckSecretGuard = 3;

inline Program verify_pin() { return parse_program(kVerifyPin); }
inline Program pwd_eq() { return parse_program(pwd_eq_source()); }
inline Program check_secret() { return parse_program(kCheckSecret); }

}  // namespace jitleak::programs
