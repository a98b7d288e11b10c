#include "lfg/error.hpp"

namespace lfg {

void throw_config(const std::string& what) { throw Error(ErrorKind::kConfig, what); }
void throw_data(const std::string& what) { throw Error(ErrorKind::kData, what); }
void throw_numeric(const std::string& what) { throw Error(ErrorKind::kNumeric, what); }
void throw_usage(const std::string& what) { throw Error(ErrorKind::kUsage, what); }

}  // namespace lfg
