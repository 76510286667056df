#include "a5/runner.hpp"

int main(int argc, char** argv) { return a5::run(argc, argv); }
