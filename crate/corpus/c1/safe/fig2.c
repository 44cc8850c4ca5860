// assume(true)
x = 0;
for (i = 0; i < N; i++) {
  x = x + N*N;
  a[i] = a[i] + N;
}
for (j = 0; j < N; j++) {
  b[j] = x + j;
}
// assert(forall j in [0, N) :: b[j] == j + N*N*N)
