#include "cli.hpp"

int main(int argc, char** argv) { return mmpid::cli::dispatch(argc, argv); }
